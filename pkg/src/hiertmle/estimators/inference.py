"""Influence-curve based Wald inference and the result container."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.stats import norm

Z_95 = 1.96


@dataclass(frozen=True, eq=False)
class TmleResult:
    """Point estimates, per-cluster influence curves and Wald inference.

    ``ic_1`` and ``ic_0`` are the treatment-specific influence curves, one
    value per cluster; ``ic_values = ic_1 - ic_0`` is the curve of the
    additive effect. Comparators fill ``epsilon_*`` with NaN and leave
    ``model`` empty.
    """

    estimator: str
    model: str
    psi_1: float
    psi_0: float
    ate: float
    risk_ratio: float
    epsilon_1: float
    epsilon_0: float
    ic_1: np.ndarray
    ic_0: np.ndarray
    ic_values: np.ndarray
    variance: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    rr_ci_low: float
    rr_ci_high: float
    n_clusters: int
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def covers(self, truth: float) -> bool:
        return self.ci_low <= truth <= self.ci_high

    def summary(self, scale: float = 100.0) -> str:
        """E.g. ``0.7% (95% CI: -0.1%, 1.4%)``."""
        return f"{scale * self.ate:.1f}% (95% CI: {scale * self.ci_low:.1f}%, {scale * self.ci_high:.1f}%)"

    def to_dict(self, include_ic: bool = False) -> dict[str, Any]:
        out = {
            "estimator": self.estimator,
            "model": self.model,
            "psi_1": self.psi_1,
            "psi_0": self.psi_0,
            "ate": self.ate,
            "risk_ratio": self.risk_ratio,
            "epsilon_1": self.epsilon_1,
            "epsilon_0": self.epsilon_0,
            "variance": self.variance,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
            "rr_ci_low": self.rr_ci_low,
            "rr_ci_high": self.rr_ci_high,
            "n_clusters": self.n_clusters,
            "diagnostics": self.diagnostics,
        }
        if include_ic:
            out["ic_values"] = self.ic_values.tolist()
        # JSON has no NaN/inf; emit null instead.
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in out.items()}

    def to_json(self, include_ic: bool = False) -> str:
        return json.dumps(self.to_dict(include_ic), indent=2, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def ic_variance(ic: np.ndarray) -> float:
    """Sample variance of the per-cluster influence curve divided by J."""
    ic = np.asarray(ic, dtype=float)
    J = ic.size
    return float(np.var(ic, ddof=1) / J) if J > 1 else math.nan


def wald_p_value(estimate: float, se: float) -> float:
    if not se > 0:
        return 1.0 if estimate == 0 else 0.0
    return float(2.0 * norm.sf(abs(estimate) / se))


def build_result(
    estimator: str,
    model: str,
    psi_1: float,
    psi_0: float,
    ic_1: np.ndarray,
    ic_0: np.ndarray,
    epsilon_1: float = math.nan,
    epsilon_0: float = math.nan,
    diagnostics: dict[str, Any] | None = None,
) -> TmleResult:
    """Assemble a result from treatment-specific means and influence curves.

    The risk-ratio interval uses the delta method on the log scale with
    influence curve ``ic_1 / psi_1 - ic_0 / psi_0``.
    """
    ic_1 = np.asarray(ic_1, dtype=float)
    ic_0 = np.asarray(ic_0, dtype=float)
    ic = ic_1 - ic_0
    ate = float(psi_1 - psi_0)
    var = ic_variance(ic)
    se = math.sqrt(var) if var >= 0 else math.nan
    rr = psi_1 / psi_0 if psi_0 > 0 else math.inf
    rr_lo = rr_hi = math.nan
    if psi_1 > 0 and psi_0 > 0:
        log_se = math.sqrt(ic_variance(ic_1 / psi_1 - ic_0 / psi_0))
        rr_lo = math.exp(math.log(rr) - Z_95 * log_se)
        rr_hi = math.exp(math.log(rr) + Z_95 * log_se)
    return TmleResult(
        estimator=estimator,
        model=model,
        psi_1=float(psi_1),
        psi_0=float(psi_0),
        ate=ate,
        risk_ratio=float(rr),
        epsilon_1=float(epsilon_1),
        epsilon_0=float(epsilon_0),
        ic_1=ic_1,
        ic_0=ic_0,
        ic_values=ic,
        variance=var,
        se=se,
        ci_low=ate - Z_95 * se,
        ci_high=ate + Z_95 * se,
        p_value=wald_p_value(ate, se),
        rr_ci_low=rr_lo,
        rr_ci_high=rr_hi,
        n_clusters=int(ic.size),
        diagnostics=dict(diagnostics or {}),
    )
