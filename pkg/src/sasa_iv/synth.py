"""Linear-Gaussian structural causal model domains with known ground truth.

Conventions: ``A[i, j] = 1`` means ``j`` is a parent of ``i``. Step 0 of
every window is the start draw ``x_0 ~ Normal(x0_mean, x0_std)``. For
``t >= 1`` a variable holds its start value while ``t <= offsets[i]``;
afterwards a root variable is ``x0_i + noise`` and a child is
``sum_j W[i, j] x^j_{t - lags[i, j]} + noise`` (steps before 0 read ``x_0``).
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

VARIATIONS = ("strengths", "lags", "offsets", "start", "all")
MAX_TRIES = 100
STABILITY_BOUND = 1.0


@dataclass(frozen=True, eq=False)
class DomainSpec:
    A: np.ndarray
    W: np.ndarray
    lags: np.ndarray
    offsets: np.ndarray
    x0_mean: np.ndarray
    x0_std: np.ndarray
    label_weights: np.ndarray
    N: int = 16
    noise_std: float = 0.3
    label_noise: float = 0.1
    task: str = "regression"
    seed: int = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name, dtype in (("A", int), ("W", float), ("lags", int), ("offsets", int),
                            ("x0_mean", float), ("x0_std", float), ("label_weights", float)):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=dtype))
        self.validate()

    @property
    def M(self):
        return self.A.shape[0]

    def validate(self):
        m = self.M
        if self.A.shape != (m, m) or self.W.shape != (m, m) or self.lags.shape != (m, m):
            raise ValueError("A, W and lags must all be M x M")
        if m < 2:
            raise ValueError("need at least two variables")
        for name in ("offsets", "x0_mean", "x0_std", "label_weights"):
            if getattr(self, name).shape != (m,):
                raise ValueError(f"{name} must have length M={m}")
        if not np.isin(self.A, (0, 1)).all() or np.diag(self.A).any():
            raise ValueError("A must be binary with a zero diagonal")
        if np.any(self.W[self.A == 0] != 0):
            raise ValueError("W must be zero wherever A is zero")
        if np.abs(self.W).sum(axis=1).max() >= STABILITY_BOUND:
            raise ValueError("unstable strengths: max absolute row sum of W must be < 1")
        if (self.lags < 1).any():
            raise ValueError("lags must be >= 1")
        if (self.offsets < 0).any():
            raise ValueError("offsets must be >= 0")
        if (self.x0_std <= 0).any() or self.noise_std < 0 or self.label_noise < 0:
            raise ValueError("standard deviations must be positive")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.N < 1:
            raise ValueError("window length N must be >= 1")

    def to_dict(self):
        out = {}
        for k in ("A", "W", "lags", "offsets", "x0_mean", "x0_std", "label_weights"):
            out[k] = getattr(self, k).tolist()
        out.update(M=self.M, N=self.N, noise_std=self.noise_std, label_noise=self.label_noise,
                   task=self.task, seed=self.seed)
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("M", None)
        return cls(**d)

    def to_manifest(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_manifest(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class SyntheticDataset:
    X: np.ndarray  # (count, N, M)
    y: np.ndarray
    spec: DomainSpec

    @property
    def manifest(self):
        return self.spec.to_manifest()


def random_adjacency(n_vars, density=0.25, seed=None):
    rng = np.random.default_rng(seed)
    A = (rng.random((n_vars, n_vars)) < density).astype(int)
    np.fill_diagonal(A, 0)
    return A


def sample_strengths(A, rng, low=0.4, high=0.9):
    """Signed strengths on ``A``; each row's magnitudes are shared among its parents."""
    A = np.asarray(A)
    indeg = np.maximum(A.sum(axis=1, keepdims=True), 1)
    for _ in range(MAX_TRIES):
        mag = rng.uniform(low, high, size=A.shape) / indeg
        W = np.where(A == 1, mag * rng.choice([-1.0, 1.0], size=A.shape), 0.0)
        if np.abs(W).sum(axis=1).max() < STABILITY_BOUND:
            return W
    raise ValueError(f"could not draw stable strengths in {MAX_TRIES} tries")


def make_spec(A, seed=None, N=16, lag_max=3, noise_std=0.3, label_noise=0.1, task="regression"):
    """A base domain on adjacency ``A`` with randomly drawn strengths, lags and offsets."""
    rng = np.random.default_rng(seed)
    A = np.asarray(A, dtype=int)
    m = A.shape[0]
    W = sample_strengths(A, rng)
    lags = np.where(A == 1, rng.integers(1, lag_max + 1, size=A.shape), 1)
    offsets = rng.integers(0, 3, size=m)
    weights = rng.normal(size=m)
    weights -= weights.mean()
    return DomainSpec(A=A, W=W, lags=lags, offsets=offsets, x0_mean=np.zeros(m), x0_std=np.ones(m),
                      label_weights=weights, N=N, noise_std=noise_std, label_noise=label_noise,
                      task=task, seed=seed, meta={"lag_max": lag_max})


def sample_pair(shared_A, variation="strengths", seed=None, **kwargs):
    """Source and target specs sharing ``shared_A`` and differing in ``variation``."""
    if variation not in VARIATIONS:
        raise ValueError(f"variation must be one of {VARIATIONS}, got {variation!r}")
    shared_A = np.asarray(shared_A, dtype=int)
    if not np.isin(shared_A, (0, 1)).all() or np.diag(shared_A).any():
        raise ValueError("shared adjacency must be binary with a zero diagonal")
    rng = np.random.default_rng(seed)
    src_seed, tgt_seed = (int(s) for s in rng.integers(0, 2**31 - 1, size=2))
    src = make_spec(shared_A, seed=src_seed, **kwargs)
    lag_max = src.meta["lag_max"]
    changes = {}
    names = ("strengths", "lags", "offsets", "start") if variation == "all" else (variation,)
    if "strengths" in names:
        changes["W"] = sample_strengths(shared_A, rng)
    if "lags" in names:
        jitter = rng.choice([-1, 1], size=shared_A.shape)
        changes["lags"] = np.where(shared_A == 1, np.clip(src.lags + jitter, 1, lag_max), 1)
    if "offsets" in names:
        changes["offsets"] = np.clip(src.offsets + rng.integers(1, 4, size=src.M), 0, max(src.N - 2, 0))
    if "start" in names:
        changes["x0_mean"] = src.x0_mean + rng.uniform(-1.0, 1.0, size=src.M)
        changes["x0_std"] = src.x0_std * rng.uniform(0.5, 2.0, size=src.M)
    tgt = replace(src, seed=tgt_seed, **changes)
    return src, tgt


def perturb_strengths(spec, scale, seed=None):
    """Target spec with ``W * (1 - 2 * scale)``: the L1 strength gap grows linearly in ``scale``."""
    if not 0 <= scale <= 1:
        raise ValueError("scale must lie in [0, 1]")
    return replace(spec, W=spec.W * (1.0 - 2.0 * scale), seed=spec.seed if seed is None else seed)


def simulate(spec, count, seed=None, x0=None):
    """Raw ``(count, N, M)`` windows from ``spec``; ``x0`` overrides the start draws."""
    rng = np.random.default_rng(seed)
    m, n = spec.M, spec.N
    if x0 is None:
        x0 = rng.normal(spec.x0_mean, spec.x0_std, size=(count, m))
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (count, m))
    X = np.empty((count, n, m))
    X[:, 0] = x0
    roots = spec.A.sum(axis=1) == 0
    parents = [np.flatnonzero(spec.A[i]) for i in range(m)]
    for t in range(1, n):
        noise = rng.normal(0.0, 1.0, size=(count, m)) * spec.noise_std
        for i in range(m):
            if t <= spec.offsets[i]:
                X[:, t, i] = x0[:, i]
                continue
            if roots[i]:
                value = x0[:, i].copy()
            else:
                value = np.zeros(count)
                for j in parents[i]:
                    value += spec.W[i, j] * X[:, max(t - spec.lags[i, j], 0), j]
            X[:, t, i] = value + noise[:, i]
    return X


def labels_for(spec, X, rng):
    y = X[:, -1] @ spec.label_weights + rng.normal(0.0, 1.0, size=len(X)) * spec.label_noise
    if spec.task == "classification":
        return (y > 0).astype(int)
    return y


def generate(spec, count, seed=None):
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    sim_seed, label_seed = (int(s) for s in rng.integers(0, 2**31 - 1, size=2))
    X = simulate(spec, count, sim_seed)
    y = labels_for(spec, X, np.random.default_rng(label_seed))
    return SyntheticDataset(X=X, y=y, spec=spec)


def ground_truth_adjacency(spec):
    return spec.A.copy()


def make_domain_pair(seed=0, n_vars=6, density=0.25, variation="strengths", count=2000, **kwargs):
    """Shared graph, spec pair and both datasets, all derived from one seed.

    Returns ``(source, target)`` :class:`SyntheticDataset` objects.
    """
    rng = np.random.default_rng(seed)
    graph_seed, pair_seed, src_seed, tgt_seed = (int(s) for s in rng.integers(0, 2**31 - 1, size=4))
    A = random_adjacency(n_vars, density, seed=graph_seed)
    src, tgt = sample_pair(A, variation, seed=pair_seed, **kwargs)
    return generate(src, count, seed=src_seed), generate(tgt, count, seed=tgt_seed)
