"""Differentiable primitives: sparsemax, gradient stop, thresholding and MMD."""

import logging
import warnings

import numpy as np
import torch

logger = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """Raised when a computation produces or receives non-finite values."""


def _check_finite(z, name="input"):
    arr = np.asarray(z.detach().cpu() if torch.is_tensor(z) else z)
    bad = np.flatnonzero(~np.isfinite(arr.ravel()))
    if bad.size:
        idx = np.unravel_index(bad[0], arr.shape) if arr.ndim else ()
        raise NumericalError(f"non-finite {name} at index {tuple(int(i) for i in idx)}: {arr[idx]!r}")


def sparsemax_np(z):
    """Euclidean projection of ``z`` onto the probability simplex (last axis).

    Uses the sort-based threshold algorithm.
    """
    z = np.asarray(z, dtype=float)
    _check_finite(z)
    if z.shape[-1] < 1:
        raise ValueError("sparsemax needs at least one coordinate")
    z_sorted = -np.sort(-z, axis=-1)
    k = np.arange(1, z.shape[-1] + 1)
    cssv = np.cumsum(z_sorted, axis=-1) - 1.0
    support = z_sorted - cssv / k > 0
    k_z = support.sum(axis=-1, keepdims=True)
    tau = np.take_along_axis(cssv, k_z - 1, axis=-1) / k_z
    return np.maximum(z - tau, 0.0)


def sparsemax_jvp(z, upstream):
    """Backward product ``upstream @ J`` of sparsemax at ``z`` (1-D).

    On the support S the Jacobian is ``diag(s) - s s^T / |S|``.
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(upstream, dtype=float)
    if z.shape != g.shape:
        raise ValueError(f"shape mismatch: {z.shape} vs {g.shape}")
    _check_finite(g, "upstream")
    s = (sparsemax_np(z) > 0).astype(float)
    return s * (g - (g * s).sum(axis=-1, keepdims=True) / s.sum(axis=-1, keepdims=True))


class _Sparsemax(torch.autograd.Function):
    @staticmethod
    def forward(ctx, z):
        z_sorted, _ = torch.sort(z, dim=-1, descending=True)
        k = torch.arange(1, z.shape[-1] + 1, dtype=z.dtype, device=z.device)
        cssv = torch.cumsum(z_sorted, dim=-1) - 1.0
        support = (z_sorted - cssv / k) > 0
        k_z = support.sum(dim=-1, keepdim=True)
        tau = torch.gather(cssv, -1, k_z - 1) / k_z.to(z.dtype)
        out = torch.clamp(z - tau, min=0.0)
        ctx.save_for_backward(out)
        return out

    @staticmethod
    def backward(ctx, grad_out):
        (out,) = ctx.saved_tensors
        s = (out > 0).to(grad_out.dtype)
        mean = (grad_out * s).sum(dim=-1, keepdim=True) / s.sum(dim=-1, keepdim=True)
        return s * (grad_out - mean)


def sparsemax(z):
    """Sparsemax over the last dimension of a tensor, with its exact Jacobian."""
    if not torch.is_tensor(z):
        return sparsemax_np(z)
    if not torch.isfinite(z).all():
        _check_finite(z, "sparsemax input")
    return _Sparsemax.apply(z)


def grad_stop(x):
    """Forward identity with zero backward contribution."""
    return x.detach()


class _StraightThrough(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, mu, band):
        ctx.save_for_backward(x)
        ctx.mu, ctx.band = mu, band
        return (x > mu).to(x.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (x,) = ctx.saved_tensors
        mask = ((x - ctx.mu).abs() <= ctx.band).to(grad_out.dtype)
        return grad_out * mask, None, None


class _SigmoidThrough(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, mu, temperature):
        ctx.save_for_backward(x)
        ctx.mu, ctx.temperature = mu, temperature
        return (x > mu).to(x.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (x,) = ctx.saved_tensors
        s = torch.sigmoid((x - ctx.mu) / ctx.temperature)
        return grad_out * s * (1 - s) / ctx.temperature, None, None


def st_indicator(x, mu, estimator="straight-through", band=1.0, temperature=0.1):
    """Hard threshold ``1(x > mu)`` with a surrogate gradient.

    ``estimator="straight-through"`` passes the upstream gradient where
    ``|x - mu| <= band``; ``"sigmoid"`` uses the derivative of
    ``sigmoid((x - mu) / temperature)``. The forward value is always binary.
    """
    if not np.isfinite(mu):
        raise ValueError(f"threshold must be finite, got {mu}")
    if not torch.is_tensor(x):
        return (np.asarray(x, dtype=float) > mu).astype(float)
    if estimator == "straight-through":
        return _StraightThrough.apply(x, float(mu), float(band))
    if estimator == "sigmoid":
        return _SigmoidThrough.apply(x, float(mu), float(temperature))
    raise ValueError(f"unknown estimator {estimator!r}")


def median_bandwidth(xs, xt):
    pooled = torch.cat([xs, xt], dim=0).detach()
    d = torch.cdist(pooled, pooled)
    iu = torch.triu_indices(len(pooled), len(pooled), offset=1)
    dists = d[iu[0], iu[1]]
    sigma = float(dists.median()) if dists.numel() else 0.0
    if not sigma > 0:
        warnings.warn("degenerate MMD bandwidth (identical points); using 1.0", RuntimeWarning)
        sigma = 1.0
    return sigma


def mmd(xs, xt, bandwidth="auto"):
    """Biased (V-statistic) squared MMD with an RBF kernel. Never negative."""
    xs = torch.as_tensor(xs, dtype=torch.float64) if not torch.is_tensor(xs) else xs
    xt = torch.as_tensor(xt, dtype=xs.dtype) if not torch.is_tensor(xt) else xt
    if xs.ndim != 2 or xt.ndim != 2 or xs.shape[1] != xt.shape[1]:
        raise ValueError(f"expected (B, D) inputs with matching D, got {tuple(xs.shape)} and {tuple(xt.shape)}")
    if len(xs) < 1 or len(xt) < 1:
        raise ValueError("mmd needs at least one sample per side")
    sigma = median_bandwidth(xs, xt) if bandwidth == "auto" else float(bandwidth)

    def k(a, b):
        d2 = (a.unsqueeze(1) - b.unsqueeze(0)).pow(2).sum(-1)
        return torch.exp(-d2 / (2 * sigma**2))

    # averaging both orientations keeps mmd(a, b) == mmd(b, a) bitwise
    cross = 0.5 * (k(xs, xt).mean() + k(xt, xs).mean())
    value = k(xs, xs).mean() + k(xt, xt).mean() - 2 * cross
    return torch.clamp(value, min=0.0)


def check_gradients(f, params, eps=1e-6, exclude=(), analytic=None, floor=1e-5, max_entries=None, seed=0):
    """Max relative error between autograd and central-difference gradients.

    ``params`` is a tensor or a dict of named tensors. ``exclude`` names
    parameters (dict) or flat indices (tensor) to skip, for paths that are
    intentionally gradient-stopped. ``analytic`` optionally supplies a
    different scalar function whose autograd gradient is compared against
    the finite differences of ``f``; use it when ``f`` contains
    piecewise-constant terms trained through surrogate gradients.
    Differences between gradients smaller than ``floor`` are measured
    absolutely, which keeps finite-difference round-off out of the result.
    ``max_entries`` caps the coordinates checked per tensor (a seeded
    random subset) for larger models.
    """
    single = torch.is_tensor(params)
    named = {"_": params} if single else dict(params)
    excluded = set(exclude)
    for p in named.values():
        p.requires_grad_(True)
        p.grad = None
    loss = (analytic or f)()
    if loss.requires_grad:
        grads = torch.autograd.grad(loss, list(named.values()), allow_unused=True)
    else:
        grads = [None] * len(named)
    worst = 0.0
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for (name, p), g in zip(named.items(), grads):
            if not single and name in excluded:
                continue
            g = torch.zeros_like(p) if g is None else g
            flat, gflat = p.view(-1), g.reshape(-1)
            coords = np.arange(flat.numel())
            if max_entries is not None and len(coords) > max_entries:
                coords = np.sort(rng.choice(coords, size=max_entries, replace=False))
            for idx in coords.tolist():
                if single and idx in excluded:
                    continue
                orig = flat[idx].item()
                flat[idx] = orig + eps
                up = float(f())
                flat[idx] = orig - eps
                down = float(f())
                flat[idx] = orig
                num = (up - down) / (2 * eps)
                ana = float(gflat[idx])
                err = abs(ana - num) / max(abs(ana), abs(num), floor)
                if err > worst:
                    logger.debug("grad mismatch %s[%d]: analytic %g numeric %g", name, idx, ana, num)
                worst = max(worst, err)
    return worst
