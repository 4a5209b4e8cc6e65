"""Cross-domain structure alignment losses."""

from dataclasses import dataclass

import torch

from .numerics import grad_stop, mmd, st_indicator

MODES = ("unidirectional", "bidirectional", "mmd")
ESTIMATORS = ("straight-through", "sigmoid")
AGGREGATES = ("batch-mean", "per-sample")


@dataclass(frozen=True)
class AlignmentConfig:
    mode: str = "unidirectional"
    mu: float = 0.08
    estimator: str = "straight-through"
    aggregate: str = "batch-mean"
    band: float = 1.0
    temperature: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.aggregate not in AGGREGATES:
            raise ValueError(f"aggregate must be one of {AGGREGATES}, got {self.aggregate!r}")
        if not 0 <= self.mu < 1:
            raise ValueError(f"mu must lie in [0, 1), got {self.mu}")


def _align(ws, wt, cfg):
    """Shared body for alpha and beta. Inputs carry a leading batch axis."""
    if ws.shape[1:] != wt.shape[1:]:
        raise ValueError(f"shape mismatch: {tuple(ws.shape)} vs {tuple(wt.shape)}")
    if cfg.mode == "mmd":
        return mmd(ws.reshape(len(ws), -1), wt.reshape(len(wt), -1))
    if cfg.aggregate == "batch-mean":
        ws, wt = ws.mean(dim=0), wt.mean(dim=0)
    elif ws.shape != wt.shape:
        raise ValueError("per-sample aggregation needs equal batch sizes")
    ind = lambda w: st_indicator(w, cfg.mu, cfg.estimator, cfg.band, cfg.temperature)  # noqa: E731
    src = ind(ws)
    if cfg.mode == "unidirectional":
        src = grad_stop(src)
    diff = (src - ind(wt)).abs()
    if cfg.aggregate == "per-sample":
        return diff.reshape(len(diff), -1).sum(-1).mean()
    return diff.sum()


def align_beta(beta_s, beta_t, cfg=AlignmentConfig()):
    """Structure alignment loss between source and target ``beta`` batches."""
    return _align(torch.as_tensor(beta_s), torch.as_tensor(beta_t), cfg)


def align_alpha(alpha_s, alpha_t, cfg=AlignmentConfig()):
    """Segment-length alignment loss between source and target ``alpha`` batches."""
    return _align(torch.as_tensor(alpha_s), torch.as_tensor(alpha_t), cfg)
