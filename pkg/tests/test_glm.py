import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from hiertmle import DesignMatrix, fit_glm, predict_glm
from hiertmle.errors import RankDeficiencyError, SchemaError

from _factories import random_dataset


def test_intercept_only_logit():
    y = np.array([1, 0, 0, 0] * 5, dtype=float)
    fit = fit_glm(np.ones((20, 1)), y)
    assert fit.converged
    assert fit.coef[0] == pytest.approx(np.log(1 / 3), abs=1e-10)


def test_binary_predictor_slope_is_log_odds_ratio():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 2, 400).astype(float)
    y = (rng.random(400) < np.where(x == 1, 0.7, 0.4)).astype(float)
    fit = fit_glm(DesignMatrix.from_columns({"x": x}), y)
    n11, n10 = np.sum((x == 1) & (y == 1)), np.sum((x == 1) & (y == 0))
    n01, n00 = np.sum((x == 0) & (y == 1)), np.sum((x == 0) & (y == 0))
    assert fit.coefficients["x"] == pytest.approx(np.log(n11 * n00 / (n10 * n01)), abs=1e-9)
    assert fit.coefficients["(Intercept)"] == pytest.approx(np.log(n01 / n00), abs=1e-9)


def test_linear_offset_exact():
    rng = np.random.default_rng(1)
    X = DesignMatrix.from_columns({"a": rng.normal(size=30), "b": rng.normal(size=30)})
    o = rng.normal(size=30)
    fit = fit_glm(X, o, offset=o, family="linear")
    np.testing.assert_allclose(fit.coef, 0.0, atol=1e-12)
    assert fit.offset_used


def test_predict_zero_coefficients():
    fit = fit_glm(np.ones((4, 1)), [0, 1, 0, 1])
    np.testing.assert_allclose(predict_glm(fit, np.ones((3, 1))), 0.5, atol=1e-12)


def test_predict_reproduces_fitted_and_clips():
    d = random_dataset(2, J=30)
    X = DesignMatrix.from_columns({"W1": d.cov[:, 0], "W2": d.cov[:, 1]})
    fit = fit_glm(X, d.outcome, weights=d.weights)
    np.testing.assert_allclose(predict_glm(fit, X), fit.fitted, rtol=1e-13)
    extreme = DesignMatrix(np.array([[1.0, 1e6, 0.0], [1.0, -1e6, 0.0]]), X.names)
    p = predict_glm(fit, extreme)
    assert np.all((p > 0) & (p < 1))
    with pytest.raises(SchemaError):
        predict_glm(fit, DesignMatrix(np.ones((2, 2)), ("(Intercept)", "W1")))


def test_rank_deficiency():
    x = np.arange(6.0)
    with pytest.raises(RankDeficiencyError):
        fit_glm(np.column_stack([np.ones(6), x, 2 * x]), [0, 1, 0, 1, 1, 0])


def test_fractional_response_and_score():
    d = random_dataset(4, J=25, binary=False)
    X = DesignMatrix.from_columns({"W1": d.cov[:, 0], "A": d.exposure_individual()})
    fit = fit_glm(X, d.outcome, weights=d.weights)
    assert fit.converged
    score = X.values.T @ (d.weights * (d.outcome - fit.fitted))
    assert np.max(np.abs(score)) <= 1e-8


def test_weight_scaling_invariance():
    d = random_dataset(6, J=25)
    X = DesignMatrix.from_columns({"W1": d.cov[:, 0]})
    a = fit_glm(X, d.outcome, weights=d.weights)
    b = fit_glm(X, d.outcome, weights=7.5 * d.weights)
    np.testing.assert_allclose(a.coef, b.coef, rtol=1e-8)


def _golden_section(f, lo, hi, tol=1e-10):
    r = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, e = b - r * (b - a), a + r * (b - a)
    fc, fe = f(c), f(e)
    while b - a > tol:
        if fc < fe:
            b, e, fe = e, c, fc
            c = b - r * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + r * (b - a)
            fe = f(e)
    return (a + b) / 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_one_parameter_offset_logistic_matches_golden_section(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(10, 200))
    h = rng.normal(size=n)
    off = rng.normal(size=n)
    w = rng.random(n) + 0.1
    y = (rng.random(n) < expit(off + 0.3 * h)).astype(float)

    def nll(e):
        p = expit(off + e * h)
        return -np.sum(w * (y * np.log(p) + (1 - y) * np.log1p(-p)))

    fit = fit_glm(h[:, None], y, weights=w, offset=off)
    assert fit.coef[0] == pytest.approx(_golden_section(nll, -10, 10), abs=1e-4)


def test_cluster_constant_least_squares_equivalence():
    rng = np.random.default_rng(9)
    for seed in range(20):
        d = random_dataset(seed, J=15, binary=False)
        xc = rng.normal(size=(d.n_clusters, 2))
        Xi = DesignMatrix.from_columns({"x1": d.broadcast(xc[:, 0]), "x2": d.broadcast(xc[:, 1])})
        Xc = DesignMatrix.from_columns({"x1": xc[:, 0], "x2": xc[:, 1]})
        ind = fit_glm(Xi, d.outcome, weights=d.weights, family="linear")
        clu = fit_glm(Xc, d.cluster_outcomes, family="linear")
        np.testing.assert_allclose(ind.coef, clu.coef, atol=1e-8)
        direct = np.linalg.lstsq(Xc.values, d.cluster_outcomes, rcond=None)[0]
        np.testing.assert_allclose(clu.coef, direct, atol=1e-10)


def test_logistic_cluster_constant_equivalence():
    # The same argument holds for the logistic score.
    d = random_dataset(11, J=30, binary=False)
    x = d.env[:, 0]
    ind = fit_glm(DesignMatrix.from_columns({"E1": d.broadcast(x)}), d.outcome, weights=d.weights)
    clu = fit_glm(DesignMatrix.from_columns({"E1": x}), d.cluster_outcomes)
    np.testing.assert_allclose(ind.coef, clu.coef, atol=1e-8)


def test_separation_reports_without_crashing():
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    fit = fit_glm(DesignMatrix.from_columns({"x": x}), [0, 0, 1, 1], max_iter=25)
    assert np.all(np.isfinite(fit.coef))
    assert np.all((fit.fitted > 0) & (fit.fitted < 1))
