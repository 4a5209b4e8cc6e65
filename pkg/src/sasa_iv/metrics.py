"""Structural distance between domains, its metric axioms, and task/recovery scores."""

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

GRID_STEP = 1e-3
GRID_SPAN = 6.0


@dataclass(frozen=True)
class SDReport:
    tv_start: float
    structure_term: float
    strength_term: float
    total: float

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def gaussian_tv(m1, s1, m2, s2, step=GRID_STEP, span=GRID_SPAN):
    """Total variation between two 1-D normals by trapezoid integration of ``|p - q| / 2``."""
    if s1 <= 0 or s2 <= 0:
        raise ValueError("standard deviations must be positive")
    lo = min(m1 - span * s1, m2 - span * s2)
    hi = max(m1 + span * s1, m2 + span * s2)
    grid = np.linspace(lo, hi, int(np.ceil((hi - lo) / step)) + 1)
    diff = np.abs(stats.norm.pdf(grid, m1, s1) - stats.norm.pdf(grid, m2, s2))
    return float(min(0.5 * trapezoid(diff, grid), 1.0))


def structural_distance(s1, s2):
    if s1.M != s2.M:
        raise ValueError(f"dimension mismatch: M={s1.M} vs M={s2.M}")
    tv = float(np.mean([gaussian_tv(a, b, c, d) for a, b, c, d in
                        zip(s1.x0_mean, s1.x0_std, s2.x0_mean, s2.x0_std)]))
    structure = float(np.abs(s1.A - s2.A).sum())
    strength = float(np.abs(s1.W - s2.W).sum())
    return SDReport(tv_start=tv, structure_term=structure, strength_term=strength,
                    total=tv + structure + strength)


def check_metric_axioms(specs, trials=100, seed=0):
    """Empirical check of non-negativity, symmetry and the triangle inequality.

    The triangle inequality is checked per term: exact-arithmetic slack 1e-9
    on the L1 terms, 1e-6 on the numerically integrated TV term.
    """
    if len(specs) < 3:
        raise ValueError("need at least 3 specs")
    rng = np.random.default_rng(seed)
    cache = {}

    def dist(a, b):
        if (a, b) not in cache:
            cache[(a, b)] = structural_distance(specs[a], specs[b])
        return cache[(a, b)]

    violations = []
    for _ in range(trials):
        s, d, t = (int(i) for i in rng.choice(len(specs), size=3, replace=True))
        st, ts, sd, dt = dist(s, t), dist(t, s), dist(s, d), dist(d, t)
        problems = []
        if min(st.tv_start, st.structure_term, st.strength_term, st.total) < 0:
            problems.append("negative")
        if st != ts:
            problems.append("asymmetric")
        if st.tv_start > sd.tv_start + dt.tv_start + 1e-6:
            problems.append("triangle:tv_start")
        for term in ("structure_term", "strength_term"):
            if getattr(st, term) > getattr(sd, term) + getattr(dt, term) + 1e-9:
                problems.append(f"triangle:{term}")
        if st.total > sd.total + dt.total + 1e-6:
            problems.append("triangle:total")
        if s == t and st.total != 0:
            problems.append("nonzero self-distance")
        if problems:
            violations.append({"triple": [s, d, t], "problems": problems})
    return {"trials": trials, "violations": violations, "passed": not violations}


def bound_diagnostic(pairs, risks):
    """Rank correlation between structural distance and the target-minus-source risk gap."""
    if len(pairs) < 3:
        raise ValueError("need at least 3 domain pairs")
    if len(pairs) != len(risks):
        raise ValueError("one (source risk, target risk) entry per pair")
    distances = [structural_distance(s, t).total for s, t in pairs]
    gaps = [float(rt - rs) for rs, rt in risks]
    rho = stats.spearmanr(distances, gaps).statistic if len(set(distances)) > 1 else float("nan")
    return {"distances": distances, "gaps": gaps, "spearman": float(rho)}


def rmse(predictions, labels):
    predictions, labels = np.asarray(predictions, float), np.asarray(labels, float)
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    return float(np.sqrt(np.mean((predictions - labels) ** 2)))


def auc(scores, labels):
    """Area under the ROC curve from the Mann-Whitney rank statistic (ties count half)."""
    scores, labels = np.asarray(scores, float), np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"length mismatch: {scores.shape} vs {labels.shape}")
    classes = np.unique(labels)
    if len(classes) != 2:
        raise ValueError(f"AUC needs exactly two label classes, got {classes.tolist()}")
    pos = labels == classes[1]
    ranks = stats.rankdata(scores)
    n_pos, n_neg = pos.sum(), (~pos).sum()
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(predictions, labels, task):
    if task == "regression":
        return {"rmse": rmse(predictions, labels)}
    if task == "classification":
        return {"auc": auc(predictions, labels)}
    raise ValueError(f"unknown task {task!r}")


def structure_score(recovered, truth):
    """Precision, recall and F1 of off-diagonal edges."""
    recovered, truth = np.asarray(recovered), np.asarray(truth)
    if recovered.shape != truth.shape or recovered.shape[0] != recovered.shape[1]:
        raise ValueError("recovered and truth must be square matrices of the same size")
    off = ~np.eye(len(truth), dtype=bool)
    r, t = recovered[off] > 0, truth[off] > 0
    tp = int((r & t).sum())
    if r.sum() == 0:
        precision = 1.0 if t.sum() == 0 else 0.0
    else:
        precision = tp / r.sum()
    recall = tp / t.sum() if t.sum() else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return float(precision), float(recall), float(f1)

