"""Suffix segments and per-variable recurrent segment encoding."""

import math

import torch
from torch import nn

from .numerics import NumericalError


def build_segments(x, i):
    """All ``N`` suffix segments of variable ``i`` (0-based) in ``x``.

    ``x`` has shape ``(B, N, M)`` (or ``(N, M)``); segment ``tau - 1`` holds
    the last ``tau`` values of variable ``i`` in temporal order.
    """
    n_vars = x.shape[-1]
    if not 0 <= i < n_vars:
        raise IndexError(f"variable index {i} out of range for M={n_vars}")
    series = x[..., i]
    n_steps = series.shape[-1]
    return [series[..., n_steps - tau:] for tau in range(1, n_steps + 1)]


class MultiLSTM(nn.Module):
    """``M`` independent single-layer LSTM cells with scalar input.

    The weights are stacked along a leading variable axis so all variables
    run in one batched op, but variable ``i`` only ever touches slice ``i``.
    Gate order is input, forget, output, cell.
    """

    def __init__(self, n_vars, hidden_size):
        super().__init__()
        self.n_vars = n_vars
        self.hidden_size = hidden_size
        self.weight_ih = nn.Parameter(torch.empty(n_vars, 4 * hidden_size))
        self.weight_hh = nn.Parameter(torch.empty(n_vars, 4 * hidden_size, hidden_size))
        self.bias = nn.Parameter(torch.empty(n_vars, 4 * hidden_size))
        self.reset_parameters()

    def reset_parameters(self, generator=None):
        bound = 1.0 / math.sqrt(self.hidden_size)
        for p in self.parameters():
            with torch.no_grad():
                p.copy_(torch.rand(p.shape, generator=generator, dtype=p.dtype) * 2 * bound - bound)

    def cell(self, x_t, h, c):
        # x_t: (M, S, B) or broadcastable; h/c: (M, S, B, d)
        m, n_seg, b, d = h.shape
        rec = torch.bmm(h.reshape(m, n_seg * b, d), self.weight_hh.transpose(1, 2)).view(m, n_seg, b, 4 * d)
        gates = rec + x_t.unsqueeze(-1) * self.weight_ih[:, None, None, :] + self.bias[:, None, None, :]
        ifo = torch.sigmoid(gates[..., : 3 * d])
        g = torch.tanh(gates[..., 3 * d:])
        c = ifo[..., d: 2 * d] * c + ifo[..., :d] * g
        h = ifo[..., 2 * d:] * torch.tanh(c)
        return h, c

    def forward(self, x):
        """Final hidden state per variable after reading ``x`` of shape (B, T, M)."""
        b, t, m = x.shape
        h = x.new_zeros(m, 1, b, self.hidden_size)
        c = torch.zeros_like(h)
        xs = x.permute(2, 1, 0)  # (M, T, B)
        for s in range(t):
            h, c = self.cell(xs[:, s, None, :], h, c)
        return h[:, 0].transpose(0, 1)


class SegmentEncoder(nn.Module):
    """Encodes every suffix segment of every variable into a segment bank.

    Output ``reps`` has shape ``(B, M, N, d_h)`` with ``reps[:, i, tau - 1]``
    the final hidden state of encoder ``i`` run from a zero state over the
    length-``tau`` suffix. All segments are advanced together: at step ``s``
    only segments that start at or before ``s`` are updated, which is exactly
    the per-segment loop without the Python-level O(N^2) iteration.
    """

    def __init__(self, n_vars, hidden_size=32):
        super().__init__()
        self.lstm = MultiLSTM(n_vars, hidden_size)

    @property
    def hidden_size(self):
        return self.lstm.hidden_size

    def forward(self, x):
        b, n, m = x.shape
        if m != self.lstm.n_vars:
            raise ValueError(f"expected {self.lstm.n_vars} variables, got {m}")
        d = self.hidden_size
        # segment index k <-> length k + 1; it starts at step n - 1 - k
        h = x.new_zeros(m, 0, b, d)
        c = x.new_zeros(m, 0, b, d)
        xs = x.permute(2, 1, 0)  # (M, N, B)
        for s in range(n):
            # newly started segment (length n - s) joins at the front
            h = torch.cat([x.new_zeros(m, 1, b, d), h], dim=1)
            c = torch.cat([x.new_zeros(m, 1, b, d), c], dim=1)
            h, c = self.lstm.cell(xs[:, s, None, :], h, c)
        # segment axis: index 0 is the length-1 suffix, index n - 1 the full window
        reps = h.permute(2, 0, 1, 3)
        check_bank(reps)
        return reps


def check_bank(reps):
    if torch.isfinite(reps).all():
        return
    bad = (~torch.isfinite(reps)).nonzero()[0].tolist()
    raise NumericalError(f"non-finite segment encoding at variable {bad[1]}, tau {bad[2] + 1}")


def encode_bank(x, encoder):
    """Functional form: segment bank of ``x`` (B, N, M) under ``encoder``."""
    return encoder(x)
