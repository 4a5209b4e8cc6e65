"""Intra- and inter-variable sparse attention over a segment bank.

Shapes (leading batch axis ``B`` everywhere):

* bank  ``(B, M, N, d)``
* alpha ``(B, M, N)``         one simplex per variable
* beta  ``(B, M, M - 1, N)``  one simplex per target variable over all
  (neighbour, lag) slots; neighbour ``k`` of variable ``i`` is
  ``neighbours(M)[i, k]``
* adjacency ``(M, M)`` with ``adjacency[i, j] = 1`` for an edge ``j -> i``
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .numerics import sparsemax, st_indicator

COSINE_EPS = 1e-12


def neighbours(n_vars):
    """``(M, M - 1)`` index table of the other variables, in increasing order."""
    return np.array([[j for j in range(n_vars) if j != i] for i in range(n_vars)], dtype=np.int64)


@dataclass
class StructureEstimate:
    alpha: torch.Tensor
    beta: torch.Tensor
    Z: torch.Tensor
    U: torch.Tensor


def intra_attention(bank, Wq, Wk):
    d = bank.shape[-1]
    q = bank @ Wq.T
    k = bank @ Wk.T
    # u_tau = mean_k <q_tau, k_k> / sqrt(d)
    u = (q * k.mean(dim=2, keepdim=True)).sum(-1) / math.sqrt(d)
    return sparsemax(u)


def summarize(bank, alpha, Wv):
    return torch.einsum("bmn,bmnd->bmd", alpha, bank @ Wv.T)


def association_scores(Z, bank):
    """Cosine similarity ``e[b, i, k, tau]`` between ``Z^i`` and ``h^j_tau``, ``j = neighbours[i, k]``."""
    b, m, n, d = bank.shape
    idx = torch.as_tensor(neighbours(m))
    dots = torch.einsum("bid,bjnd->bijn", Z, bank)
    norms = Z.norm(dim=-1)[:, :, None, None] * bank.norm(dim=-1)[:, None, :, :]
    cos = dots / (norms + COSINE_EPS)
    return torch.gather(cos, 2, idx[None, :, :, None].expand(b, m, m - 1, n))


def inter_attention(Z, bank):
    e = association_scores(Z, bank)
    b, m, k, n = e.shape
    return sparsemax(e.reshape(b, m, k * n)).reshape(b, m, k, n)


def structure_representation(beta, bank):
    m = bank.shape[1]
    idx = torch.as_tensor(neighbours(m))
    nb = bank[:, idx]  # (B, M, M-1, N, d)
    return torch.einsum("bikn,biknd->bid", beta, nb)


def beta_to_matrix(beta_slots, reduce="any"):
    """Scatter per-target slots ``(..., M, M - 1, N)`` into an ``(..., M, M)`` matrix.

    ``reduce="any"`` is a logical-or over lags (for binarized input);
    ``"max"`` and ``"sum"`` aggregate real weights.
    """
    beta_slots = np.asarray(beta_slots)
    m = beta_slots.shape[-3]
    if reduce == "any":
        red = (beta_slots > 0).any(axis=-1).astype(float)
    elif reduce == "max":
        red = beta_slots.max(axis=-1)
    elif reduce == "sum":
        red = beta_slots.sum(axis=-1)
    else:
        raise ValueError(f"unknown reduction {reduce!r}")
    out = np.zeros(beta_slots.shape[:-3] + (m, m))
    idx = neighbours(m)
    for i in range(m):
        out[..., i, idx[i]] = red[..., i, :]
    return out


def binarize_structure(est, mu, estimator="straight-through"):
    """Thresholded alpha and beta plus the lag-free adjacency.

    ``est`` is a :class:`StructureEstimate` or an ``(alpha, beta)`` pair of
    unbatched ``(M, N)`` / ``(M, M - 1, N)`` arrays.
    """
    if not 0 <= mu < 1:
        raise ValueError(f"mu must lie in [0, 1), got {mu}")
    alpha, beta = (est.alpha, est.beta) if isinstance(est, StructureEstimate) else est
    alpha = torch.as_tensor(alpha)
    beta = torch.as_tensor(beta)
    alpha_bin = st_indicator(alpha, mu, estimator)
    beta_bin = st_indicator(beta, mu, estimator)
    adjacency = beta_to_matrix(beta_bin.detach().cpu().numpy(), reduce="any")
    return alpha_bin, beta_bin, adjacency


class StructureAttention(nn.Module):
    """Holds the shared ``W^Q``, ``W^K``, ``W^V`` projections."""

    def __init__(self, hidden_size):
        super().__init__()
        self.Wq = nn.Parameter(torch.empty(hidden_size, hidden_size))
        self.Wk = nn.Parameter(torch.empty(hidden_size, hidden_size))
        self.Wv = nn.Parameter(torch.empty(hidden_size, hidden_size))
        self.reset_parameters()

    def reset_parameters(self, generator=None):
        bound = 1.0 / math.sqrt(self.Wq.shape[1])
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.rand(p.shape, generator=generator, dtype=p.dtype) * 2 * bound - bound)

    def forward(self, bank):
        alpha = intra_attention(bank, self.Wq, self.Wk)
        Z = summarize(bank, alpha, self.Wv)
        beta = inter_attention(Z, bank)
        U = structure_representation(beta, bank)
        return StructureEstimate(alpha=alpha, beta=beta, Z=Z, U=U)


def adjacency_from_beta(beta, mu, estimator=None, band=1.0, temperature=0.1):
    """Batched ``(B, M, M)`` adjacency from ``beta`` thresholded at ``mu``.

    With ``estimator=None`` the result carries no gradient; otherwise the
    indicator uses that surrogate and the lag reduction is a max.
    """
    b, m, k, n = beta.shape
    if estimator is None:
        lit = (beta.detach() > mu).any(dim=-1).to(beta.dtype)
    else:
        lit = st_indicator(beta, mu, estimator, band, temperature).amax(dim=-1)
    idx = torch.as_tensor(neighbours(m))
    out = beta.new_zeros(b, m, m)
    return out.scatter_(2, idx[None].expand(b, m, k), lit)
