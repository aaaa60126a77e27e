import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hfsense.explain import explain_early_fusion, shap_exact, shap_frame, shap_summary
from hfsense.learn import LogisticModel, fit_logistic


def model(w, b=0.0, mean=None, scale=None):
    w = np.asarray(w, dtype=float)
    n = len(w)
    return LogisticModel(tuple(f"f{i}" for i in range(n)), w, float(b),
                         np.zeros(n) if mean is None else np.asarray(mean, float),
                         np.ones(n) if scale is None else np.asarray(scale, float))


def brute_shap(m, x, B, link="probability"):
    """Direct Shapley sum over explicit subsets, evaluating the model on spliced rows."""
    n = len(x)

    def v(S):
        rows = B.copy()
        rows[:, list(S)] = x[list(S)]
        out = m.decision_function(rows) if link == "logit" else m.predict_proba(rows)
        return float(np.mean(out))

    phi = np.zeros(n)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for r in range(n):
            for S in itertools.combinations(others, r):
                wgt = math.factorial(r) * math.factorial(n - r - 1) / math.factorial(n)
                phi[i] += wgt * (v(S + (i,)) - v(S))
    return phi


@pytest.mark.parametrize("link", ["probability", "logit"])
def test_matches_exhaustive_coalitions(link):
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 6))
        m = model(rng.standard_normal(n) * 2, rng.standard_normal(), rng.standard_normal(n), rng.uniform(0.5, 2, n))
        x = rng.standard_normal(n) * 2
        B = rng.standard_normal((int(rng.integers(1, 15)), n))
        row = shap_exact(m, x, B, output=link)
        np.testing.assert_allclose(row.phi, brute_shap(m, x, B, link), atol=1e-12)


def test_background_mean_point_gives_zero():
    m = model([1.0, -2.0, 0.5], 0.3)
    x = np.array([0.2, 0.4, -1.0])
    row = shap_exact(m, x, x[None, :])
    assert np.all(row.phi == 0)


def test_symmetry():
    rng = np.random.default_rng(1)
    m = model([0.7, 0.7, -0.2])
    B = rng.standard_normal((30, 3))
    B[:, 1] = B[:, 0]
    row = shap_exact(m, np.array([1.3, 1.3, 0.1]), B)
    assert abs(row.phi[0] - row.phi[1]) < 1e-12


@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_efficiency_dummy_and_linear_closed_form(seed, n):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n) * 3
    dummy = int(rng.integers(n))
    w[dummy] = 0.0
    mean, scale = rng.standard_normal(n), rng.uniform(0.1, 5, n)
    m = model(w, rng.standard_normal(), mean, scale)
    x = rng.standard_normal(n) * 3
    B = rng.standard_normal((int(rng.integers(1, 40)), n)) * 2
    p = shap_exact(m, x, B)
    assert abs(p.phi.sum() + p.base_value - p.model_output) < 1e-9
    assert abs(p.model_output - m.predict_proba(x[None, :])[0]) < 1e-12
    assert p.phi[dummy] == 0.0
    lin = shap_exact(m, x, B, output="logit")
    closed = w / scale * (x - B.mean(axis=0))
    np.testing.assert_allclose(lin.phi, closed, atol=1e-9)
    assert lin.phi[dummy] == 0.0


def test_errors():
    m = model(np.ones(21))
    with pytest.raises(ValueError, match="20"):
        shap_exact(m, np.zeros(21), np.zeros((1, 21)))
    with pytest.raises(ValueError, match="empty"):
        shap_exact(model([1.0]), np.zeros(1), np.zeros((0, 1)))
    with pytest.raises(ValueError):
        shap_exact(model([1.0]), np.zeros(1), np.zeros((1, 1)), output="margin")


def test_summary_ranking():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((400, 2))
    m = model([2.0, 1.0])  # A = f0 has twice B's weight, equal variance
    rows = [shap_exact(m, x, X[:50], output="logit") for x in X[50:150]]
    ranking, triples = shap_summary(rows)
    assert ranking["feature"].tolist() == ["f0", "f1"]
    assert ranking["rank"].tolist() == [1, 2]
    assert len(triples) == 200 and set(triples.columns) >= {"feature", "phi", "feature_value"}


def test_summary_single_row_and_zero_ties():
    m = model([0.0, 0.0, 0.0])
    row = shap_exact(m, np.ones(3), np.zeros((2, 3)))
    row.feature_names = ("zeta", "alpha", "mid")
    ranking, _ = shap_summary([row])
    assert ranking["feature"].tolist() == ["alpha", "mid", "zeta"]
    m = model([3.0, -1.0])
    ranking, _ = shap_summary([shap_exact(m, np.array([1.0, 5.0]), np.zeros((1, 2)), output="logit")])
    assert ranking["feature"].tolist() == ["f1", "f0"]  # |-5| > |3|
    with pytest.raises(ValueError):
        shap_summary([])


def test_fitted_model_constant_column_is_dummy():
    rng = np.random.default_rng(3)
    X = np.c_[rng.standard_normal(40), np.full(40, 7.0)]
    y = (X[:, 0] > 0).astype(int)
    m = fit_logistic(X, y)
    row = shap_exact(m, np.array([0.4, 7.0]), X)
    assert row.phi[1] == 0.0


def test_early_fusion_rows_obey_efficiency(small_table):
    rows, report = explain_early_fusion(small_table, ["kccq", "motion", "social"], seed=1)
    assert len(rows) == sum(len(f.event_ids) for f in report.folds)
    for r in rows:
        assert abs(r.phi.sum() + r.base_value - r.model_output) < 1e-9
    frame = shap_frame(rows)
    assert list(frame.columns) == ["event_id", "feature", "phi", "feature_value", "base_value", "model_output"]
