"""Weighted logistic / linear regression with an optional fixed offset.

This is the only fitting engine in the package: initial outcome regressions,
propensity scores and the one-parameter fluctuation of the targeting step
all go through :func:`fit_glm`. Logistic fits accept fractional responses in
[0, 1] (quasi-binomial likelihood), which is what a regression of a cluster
proportion ``Y^c`` needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np
from scipy.special import expit, log_expit, xlogy

from .errors import ConfigurationError, DomainError, RankDeficiencyError, SchemaError

ETA_CLIP = 30.0
_COND_LIMIT = 1e12


class Family(str, Enum):
    LOGISTIC = "logistic"
    LINEAR = "linear"

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(f"unknown GLM family {value!r}") from None


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Named real-valued regressors, one row per observation."""

    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        names = tuple(self.names)
        if values.shape[1] != len(names):
            raise SchemaError(f"{values.shape[1]} columns but {len(names)} names")
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {names}")
        if not np.all(np.isfinite(values)):
            raise DomainError("design matrix has non-finite entries")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)

    @classmethod
    def from_columns(
        cls, columns: Mapping[str, np.ndarray], n: int | None = None, intercept: bool = True
    ) -> "DesignMatrix":
        cols = {k: np.asarray(v, dtype=float).reshape(-1) for k, v in columns.items()}
        if n is None:
            if not cols:
                raise SchemaError("cannot infer row count of an empty design")
            n = len(next(iter(cols.values())))
        parts, names = [], []
        if intercept:
            parts.append(np.ones(n))
            names.append("(Intercept)")
        for k, v in cols.items():
            parts.append(v)
            names.append(k)
        values = np.column_stack(parts) if parts else np.empty((n, 0))
        return cls(values, tuple(names))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class GlmFit:
    family: Family
    coef: np.ndarray
    names: tuple[str, ...]
    offset_used: bool
    converged: bool
    iterations: int
    deviance: float
    fitted: np.ndarray

    @property
    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.coef)))


def _as_design(X) -> DesignMatrix:
    if isinstance(X, DesignMatrix):
        return X
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return DesignMatrix(X, tuple(f"x{k}" for k in range(X.shape[1])))


def _check_rank(X: np.ndarray, w: np.ndarray, names) -> None:
    if X.shape[1] == 0:
        return
    Xw = X[w > 0] * np.sqrt(w[w > 0])[:, None]
    if Xw.shape[0] < X.shape[1]:
        raise RankDeficiencyError(f"{Xw.shape[0]} weighted rows for {X.shape[1]} coefficients")
    s = np.linalg.svd(Xw, compute_uv=False)
    if s[-1] <= s[0] * max(Xw.shape) * np.finfo(float).eps or s[0] / s[-1] > _COND_LIMIT:
        raise RankDeficiencyError(f"design with columns {list(names)} is singular or ill-conditioned")


def _linear_predictor(X, beta, offset):
    return np.clip(X @ beta + offset, -ETA_CLIP, ETA_CLIP)


def _logistic_nll(y, w, eta):
    return -np.sum(w * (y * log_expit(eta) + (1.0 - y) * log_expit(-eta)))


def _binomial_deviance(y, w, mu):
    return float(2.0 * np.sum(w * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu)))))


def fit_glm(
    X,
    y,
    weights=None,
    offset=None,
    family: Family | str = Family.LOGISTIC,
    max_iter: int = 100,
    tol: float = 1e-10,
) -> GlmFit:
    """Fit a weighted GLM.

    Parameters
    ----------
    X : DesignMatrix or array of shape (n, p)
        Regressors. Include an intercept column explicitly if one is wanted.
    y : array of shape (n,)
        Response. For the logistic family it must lie in [0, 1].
    weights : array of shape (n,), optional
        Nonnegative observation weights (default 1).
    offset : array of shape (n,), optional
        Fixed term added to the linear predictor.
    family : {"logistic", "linear"}
    max_iter : int
        Newton/IRLS iteration cap for the logistic family.
    tol : float
        Convergence threshold on the max-norm of the weighted score. Tighter
        than needed for most uses; Newton converges quadratically, so the
        extra precision costs about one iteration.

    Returns
    -------
    GlmFit
        ``converged`` is False when the iteration cap was hit.

    Raises
    ------
    RankDeficiencyError
        If the weighted design is singular or badly conditioned.
    """
    family = Family.parse(family)
    design = _as_design(X)
    Xv = design.values
    n, p = Xv.shape
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float).reshape(-1)
    if y.shape != (n,) or w.shape != (n,) or off.shape != (n,):
        raise SchemaError("X, y, weights and offset must have matching lengths")
    if np.any(w < 0) or not np.any(w > 0):
        raise DomainError("weights must be nonnegative and not all zero")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(off))):
        raise DomainError("response and offset must be finite")
    _check_rank(Xv, w, design.names)

    if family is Family.LINEAR:
        sw = np.sqrt(w)
        beta = np.linalg.lstsq(Xv * sw[:, None], (y - off) * sw, rcond=None)[0] if p else np.zeros(0)
        fitted = Xv @ beta + off
        resid = y - fitted
        score = Xv.T @ (w * resid)
        return GlmFit(
            family=family,
            coef=beta,
            names=design.names,
            offset_used=offset is not None,
            converged=bool(p == 0 or np.max(np.abs(score)) <= max(tol, 1e-8 * np.sum(w))),
            iterations=1,
            deviance=float(np.sum(w * resid**2)),
            fitted=fitted,
        )

    if np.any((y < 0) | (y > 1)):
        raise DomainError("logistic response must lie in [0, 1]")

    beta = np.zeros(p)
    eta = _linear_predictor(Xv, beta, off)
    nll = _logistic_nll(y, w, eta)
    converged = p == 0
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if p == 0:
            break
        mu = expit(eta)
        score = Xv.T @ (w * (y - mu))
        if np.max(np.abs(score)) <= tol:
            converged = True
            break
        hess = Xv.T @ (Xv * (w * mu * (1.0 - mu))[:, None])
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while True:
            cand = beta + t * step
            eta_c = _linear_predictor(Xv, cand, off)
            nll_c = _logistic_nll(y, w, eta_c)
            if nll_c <= nll + 1e-12 * abs(nll) or t < 1e-10:
                break
            t *= 0.5
        stalled = abs(nll - nll_c) <= 1e-15 * max(abs(nll), 1.0) and np.max(np.abs(t * step)) <= 1e-10
        beta, eta, nll = cand, eta_c, nll_c
        if stalled:
            # Float precision floor: the score cannot be pushed further down.
            converged = True
            break

    mu = expit(eta)
    return GlmFit(
        family=family,
        coef=beta,
        names=design.names,
        offset_used=offset is not None,
        converged=bool(converged),
        iterations=iterations,
        deviance=_binomial_deviance(y, w, mu),
        fitted=mu,
    )


def predict_glm(fit: GlmFit, X, offset=None) -> np.ndarray:
    """Predictions on the response scale.

    Logistic predictions use a linear predictor clipped to +-30, so they lie
    strictly inside (0, 1).
    """
    if isinstance(X, DesignMatrix):
        if X.names != fit.names:
            raise SchemaError(f"design columns {X.names} do not match fitted {fit.names}")
        Xv = X.values
    else:
        Xv = np.asarray(X, dtype=float)
        if Xv.ndim == 1:
            Xv = Xv[:, None]
        if Xv.shape[1] != len(fit.coef):
            raise SchemaError(f"design has {Xv.shape[1]} columns, fit has {len(fit.coef)}")
    off = 0.0 if offset is None else np.asarray(offset, dtype=float)
    eta = Xv @ fit.coef + off
    if fit.family is Family.LINEAR:
        return eta
    return expit(np.clip(eta, -ETA_CLIP, ETA_CLIP))
