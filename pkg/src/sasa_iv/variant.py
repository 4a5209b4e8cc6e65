"""Graph-attention autoregressive autoencoder for domain-variant strengths."""

import math
import warnings
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .numerics import grad_stop
from .segments import MultiLSTM


@dataclass
class VariantState:
    g_v: torch.Tensor
    x_hat: torch.Tensor = None
    attention: torch.Tensor = None


class GraphAttention(nn.Module):
    """Single-head additive graph attention over in-neighbourhoods plus self-loops."""

    def __init__(self, in_size, out_size, negative_slope=0.2):
        super().__init__()
        self.proj = nn.Linear(in_size, out_size, bias=False)
        self.attn_dst = nn.Parameter(torch.empty(out_size))
        self.attn_src = nn.Parameter(torch.empty(out_size))
        self.negative_slope = negative_slope
        self.reset_parameters()

    def reset_parameters(self, generator=None):
        # attention vectors only; proj is drawn like any other Linear
        bound = 1.0 / math.sqrt(self.attn_dst.numel())
        with torch.no_grad():
            for p in (self.attn_dst, self.attn_src):
                p.copy_(torch.rand(p.shape, generator=generator, dtype=p.dtype) * 2 * bound - bound)

    def forward(self, feats, adjacency):
        # feats: (B, M, F); adjacency: (B, M, M) or (M, M), adjacency[i, j] = edge j -> i
        z = self.proj(feats)
        m = z.shape[1]
        adj = adjacency.to(z.dtype)
        if adj.ndim == 2:
            adj = adj.expand(z.shape[0], m, m)
        eye = torch.eye(m, dtype=z.dtype)
        # self-loops always on; adjacency enters multiplicatively so a
        # surrogate gradient on it (if any) reaches the structure
        weight = adj * (1 - eye) + eye
        scores = F.leaky_relu(
            (z @ self.attn_dst)[:, :, None] + (z @ self.attn_src)[:, None, :], self.negative_slope
        )
        shift = scores.detach().masked_fill(weight.detach() == 0, float("-inf")).amax(-1, keepdim=True)
        # absent edges have zero weight; clamping keeps exp finite there so
        # inf * 0 cannot turn into NaN
        present = weight.detach() > 0
        unnorm = weight * torch.exp(torch.where(present, scores - shift, (scores - shift).clamp(max=0)))
        att = unnorm / unnorm.sum(-1, keepdim=True)
        return F.elu(att @ z), att


class VariantEncoder(nn.Module):
    """Encoder ``psi_e`` + graph layer producing ``g_v``, decoder ``psi_d`` producing ``x_hat``.

    Node ``i`` sees the hidden state of its own LSTM over ``x_{1:t-1}``
    concatenated with the raw history ``x^i_{1:t-1}``; the final step is never read.
    """

    def __init__(self, n_vars, n_steps, hidden_size=16, node_size=16, pooling="concat", decoder_size=32):
        super().__init__()
        if pooling not in ("concat", "mean"):
            raise ValueError(f"pooling must be 'concat' or 'mean', got {pooling!r}")
        self.n_vars, self.n_steps, self.pooling = n_vars, n_steps, pooling
        self.lstm = MultiLSTM(n_vars, hidden_size)
        self.gat = GraphAttention(hidden_size + n_steps - 1, node_size)
        self.out_size = node_size * n_vars if pooling == "concat" else node_size
        self.decoder = nn.Sequential(nn.Linear(self.out_size, decoder_size), nn.ReLU(), nn.Linear(decoder_size, n_vars))

    def encode(self, x, adjacency, stop_structure=True):
        history = x[:, :-1, :]
        adjacency = torch.as_tensor(adjacency, dtype=x.dtype)
        if stop_structure:
            adjacency = grad_stop(adjacency)
        if not adjacency.any():
            warnings.warn("empty structure: variant encoder falls back to self-loops only", RuntimeWarning)
        feats = torch.cat([self.lstm(history), history.transpose(1, 2)], dim=-1)
        nodes, att = self.gat(feats, adjacency)
        g_v = nodes.flatten(1) if self.pooling == "concat" else nodes.mean(1)
        return VariantState(g_v=g_v, attention=att)

    def decode(self, state):
        state.x_hat = self.decoder(state.g_v)
        return state.x_hat

    def forward(self, x, adjacency, stop_structure=True):
        state = self.encode(x, adjacency, stop_structure)
        self.decode(state)
        return state


def encode_variant(x, adjacency, module):
    return module.encode(x, adjacency)


def decode_variant(state, module):
    return module.decode(state)


def reconstruction_loss(x_hat, x_t):
    if x_hat.shape != x_t.shape:
        raise ValueError(f"shape mismatch: {tuple(x_hat.shape)} vs {tuple(x_t.shape)}")
    return ((x_hat - x_t) ** 2).mean()

