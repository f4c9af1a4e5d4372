"""Clever covariates, the logistic fluctuation and the targeted update."""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit, log_expit, logit

from ..errors import PositivityError, TargetingError
from ..glm import ETA_CLIP, fit_glm

EPS_BOUND = 10.0
FLUCT_TOL = 1e-12


def clever_covariate(exposure, g_1, a: int) -> np.ndarray:
    """``H = 1{A = a} / g(a)`` with ``g(0) = 1 - g_1``.

    Raises
    ------
    PositivityError
        If ``g(a)`` is zero for some unit.
    """
    exposure = np.asarray(exposure)
    g_1 = np.asarray(g_1, dtype=float)
    g_a = g_1 if a == 1 else 1.0 - g_1
    if np.any(g_a <= 0):
        raise PositivityError(f"propensity of exposure level {a} is zero for {int(np.sum(g_a <= 0))} units")
    return (exposure == a) / g_a


def _nll(eps, y, w, off, h):
    eta = np.clip(off + eps * h, -ETA_CLIP, ETA_CLIP)
    return -np.sum(w * (y * log_expit(eta) + (1.0 - y) * log_expit(-eta)))


def fluctuate_detail(y, qbar_obs, clever, weights=None) -> tuple[float, str]:
    """Like :func:`fluctuate`, also returning the method that produced ``epsilon``."""
    y = np.asarray(y, dtype=float)
    h = np.asarray(clever, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if not np.any(h * w != 0):
        raise TargetingError("clever covariate is identically zero; no unit received this exposure level")
    off = logit(np.asarray(qbar_obs, dtype=float))

    fit = fit_glm(h[:, None], y, weights=w, offset=off, family="logistic", tol=FLUCT_TOL)
    if fit.converged and abs(fit.coef[0]) <= EPS_BOUND:
        return float(fit.coef[0]), "irls"

    res = minimize_scalar(
        _nll, bounds=(-EPS_BOUND, EPS_BOUND), args=(y, w, off, h), method="bounded", options={"xatol": 1e-12}
    )
    eps = float(res.x)
    score = np.sum(w * h * (y - expit(np.clip(off + eps * h, -ETA_CLIP, ETA_CLIP))))
    if abs(score) > 1e-6 * max(1.0, np.sum(w)):
        raise TargetingError(f"fluctuation failed: score {score:.3g} at epsilon {eps:.6g}")
    return eps, "bounded-search"


def fluctuate(y, qbar_obs, clever, weights=None) -> float:
    """Weighted MLE of ``epsilon`` in ``logit q = logit qbar_obs + epsilon H``.

    One-parameter logistic regression of ``y`` on the clever covariate with
    offset ``logit(qbar_obs)`` and no intercept, fitted by Newton/IRLS. If
    that fails a bounded scalar search over ``[-10, 10]`` is used instead.

    Raises
    ------
    TargetingError
        If the clever covariate is all zero, or neither method solves the score equation.
    """
    return fluctuate_detail(y, qbar_obs, clever, weights)[0]


def update(qbar, epsilon: float, clever) -> np.ndarray:
    """Targeted predictions ``expit(logit(qbar) + epsilon H)``."""
    return expit(np.clip(logit(np.asarray(qbar, dtype=float)) + epsilon * np.asarray(clever), -ETA_CLIP, ETA_CLIP))
