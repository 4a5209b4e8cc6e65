import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_sd
from sasa_iv.metrics import (auc, bound_diagnostic, check_metric_axioms, evaluate, gaussian_tv, rmse,
                             structural_distance, structure_score)
from sasa_iv.synth import make_spec, perturb_strengths, random_adjacency, sample_pair


def spec(seed=0, m=5):
    return make_spec(random_adjacency(m, 0.4, seed=seed), seed=seed)


def test_sd_identity_and_symmetry():
    s = spec()
    assert structural_distance(s, s).total == 0
    a, b = sample_pair(s.A, "all", seed=1)
    assert structural_distance(a, b) == structural_distance(b, a)


def test_sd_two_entry_structure_gap():
    s = spec()
    A = s.A.copy()
    zero = np.argwhere(A == 0)
    off = [tuple(ix) for ix in zero if ix[0] != ix[1]][:2]
    for ix in off:
        A[ix] = 1
    t = replace(s, A=A)
    r = structural_distance(s, t)
    assert r.total == 2 and r.structure_term == 2 and r.tv_start == 0 and r.strength_term == 0


def test_sd_matches_independent_evaluation():
    a, b = sample_pair(spec(3).A, "all", seed=3)
    r = structural_distance(a, b)
    tv, structure, strength = naive_sd(a, b)
    assert r.tv_start == pytest.approx(tv, abs=1e-5)
    assert r.structure_term == structure and r.strength_term == pytest.approx(strength, abs=1e-12)
    assert r.total == r.tv_start + r.structure_term + r.strength_term
    assert json.loads(r.to_json())["total"] == r.total


def test_gaussian_tv_closed_form_equal_variance():
    from scipy.stats import norm

    for dm in (0.1, 0.5, 2.0):
        assert gaussian_tv(0, 1, dm, 1) == pytest.approx(2 * norm.cdf(dm / 2) - 1, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0.2, 3), st.floats(-3, 3), st.floats(0.2, 3))
def test_tv_in_unit_interval(m1, s1, m2, s2):
    assert 0 <= gaussian_tv(m1, s1, m2, s2) <= 1


def test_sd_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        structural_distance(spec(m=4), spec(m=5))


def test_metric_axioms_pass():
    A = random_adjacency(5, 0.4, seed=1)
    specs = [s for k in range(4) for s in sample_pair(A, "all", seed=k)]
    report = check_metric_axioms(specs, trials=100)
    assert report["passed"] and not report["violations"]
    same = check_metric_axioms([specs[0]] * 3, trials=5)
    assert same["passed"]
    with pytest.raises(ValueError):
        check_metric_axioms(specs[:2])


def test_metric_axioms_flag_violations(monkeypatch):
    from sasa_iv import metrics
    from sasa_iv.metrics import SDReport

    def lopsided(a, b):
        # asymmetric by construction
        v = float(a.seed > b.seed)
        return SDReport(tv_start=0.0, structure_term=v, strength_term=0.0, total=v)

    monkeypatch.setattr(metrics, "structural_distance", lopsided)
    report = check_metric_axioms([spec(0), spec(1), spec(2)], trials=50)
    assert not report["passed"]
    assert any("asymmetric" in v["problems"] for v in report["violations"])
    assert all(len(v["triple"]) == 3 for v in report["violations"])


def test_bound_diagnostic():
    base = spec(2)
    pairs = [(base, perturb_strengths(base, s)) for s in (0.0, 0.1, 0.2, 0.3, 0.4)]
    risks = [(1.0, 1.0 + k) for k in range(5)]
    report = bound_diagnostic(pairs, risks)
    assert report["distances"][0] == 0 and report["gaps"][0] == 0
    assert np.all(np.diff(report["distances"]) > 0)
    assert report["spearman"] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        bound_diagnostic(pairs[:2], risks[:2])


def test_task_metrics():
    y = np.array([0.0, 1.0, 2.0])
    assert rmse(y, y) == 0 and rmse(y + 1, y) == pytest.approx(1.0)
    labels = np.array([0, 0, 1, 1])
    assert auc([0.1, 0.2, 0.8, 0.9], labels) == 1.0
    assert auc(np.zeros(4), labels) == 0.5
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        rmse([1, 2], [1])
    assert evaluate(y, y, "regression") == {"rmse": 0.0}
    assert evaluate([0.2, 0.7], [0, 1], "classification") == {"auc": 1.0}


def test_auc_matches_sklearn():
    from sklearn.metrics import roc_auc_score

    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 200)
    s = rng.normal(size=200) + y
    s[::7] = s[0]  # a few ties
    assert auc(s, y) == pytest.approx(roc_auc_score(y, s), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_auc_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    y = np.r_[0, 1, rng.integers(0, 2, 30)]
    s = rng.normal(size=32)
    assert auc(s, y) == auc(np.exp(2 * s) + 3, y)


def test_structure_score():
    truth = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]])
    assert structure_score(truth, truth) == (1.0, 1.0, 1.0)
    assert structure_score(np.zeros((3, 3)), truth) == (0.0, 0.0, 0.0)
    comp = (1 - truth) * (1 - np.eye(3, dtype=int))
    assert structure_score(comp, truth)[0] == 0.0
    assert structure_score(np.zeros((3, 3)), np.zeros((3, 3)))[0] == 1.0
