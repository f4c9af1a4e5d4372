"""Unadjusted, Hájek IPTW and G-computation comparators.

All three treat the cluster as the independent unit and return a
:class:`TmleResult` so they can be reported side by side with the TMLEs.
"""

from __future__ import annotations

import numpy as np

from ..data import HierarchicalDataset
from ..errors import ConfigurationError, DataError
from ..glm import Family, predict_glm
from ..superlearner import Level, LearnerSpec, Target, learner_design, learner_response
from .inference import TmleResult, build_result
from .nuisance import ModelSpec, PropensitySpec, TmleOptions, fit_outcome, fit_propensity, truncate


def _require_both_arms(d: HierarchicalDataset) -> None:
    n1 = int(np.sum(d.exposure == 1))
    if n1 == 0 or n1 == d.n_clusters:
        raise DataError("both exposure arms need at least one cluster")


def _hajek(yc: np.ndarray, weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Weighted arm mean and its influence curve with the weights held fixed."""
    psi = float(np.sum(weights * yc) / np.sum(weights))
    return psi, weights * (yc - psi) / np.mean(weights)


def unadjusted(d: HierarchicalDataset) -> TmleResult:
    """Difference in mean cluster outcome between exposed and unexposed clusters."""
    _require_both_arms(d)
    yc = d.cluster_outcomes
    psi, ic = {}, {}
    for a in (1, 0):
        psi[a], ic[a] = _hajek(yc, (d.exposure == a).astype(float))
    return build_result("unadjusted", "", psi[1], psi[0], ic[1], ic[0])


def iptw(d: HierarchicalDataset, g_learner: PropensitySpec, options: TmleOptions | None = None) -> TmleResult:
    """Hájek-stabilised inverse-probability-weighted arm means of ``Y^c``.

    Weights are ``1{A = a} / g^c(a)`` with the cluster-level propensity
    truncated to ``[g_bound, 1 - g_bound]``. The influence curve holds the
    fitted propensity fixed.
    """
    options = options or TmleOptions()
    _require_both_arms(d)
    gfit = fit_propensity(d, g_learner, Level.CLUSTER, options)
    g1, n_trunc = truncate(gfit.predict(d)[0], options.g_bound)
    yc = d.cluster_outcomes
    psi, ic = {}, {}
    for a in (1, 0):
        g_a = g1 if a == 1 else 1.0 - g1
        psi[a], ic[a] = _hajek(yc, (d.exposure == a) / g_a)
    return build_result("iptw", "", psi[1], psi[0], ic[1], ic[0], diagnostics={"n_truncated": n_trunc})


def _delta_method_ic(d: HierarchicalDataset, learner: LearnerSpec, fit, options: TmleOptions) -> dict[int, np.ndarray]:
    """Influence curve of the plug-in mean that accounts for the GLM fit.

    Stacks the GLM estimating equation with the plug-in mean:
    ``IC_j(a) = Q^c_j(a) - psi(a) + J * dpsi' M^{-1} U_j`` where ``U_j`` is
    cluster j's score contribution and ``M`` the summed information.
    """
    J = d.n_clusters
    X = learner_design(learner, d, Target.OUTCOME).values
    y, w = learner_response(learner, d, Target.OUTCOME)
    mu = predict_glm(fit, X)
    v = mu * (1.0 - mu) if learner.family is Family.LOGISTIC else np.ones_like(mu)
    U = X * (w * (y - mu))[:, None]
    M = X.T @ (X * (w * v)[:, None])
    unit_w = np.ones(J) if learner.level is Level.CLUSTER else d.weights
    if learner.level is Level.INDIVIDUAL:
        U = d.cluster_sum(U)
    out = {}
    for a in (1, 0):
        Xa = learner_design(learner, d, Target.OUTCOME, a).values
        mua = predict_glm(fit, Xa)
        va = mua * (1.0 - mua) if learner.family is Family.LOGISTIC else np.ones_like(mua)
        qc = mua if learner.level is Level.CLUSTER else d.weighted_cluster_mean(mua)
        grad = Xa.T @ (unit_w * va) / J
        out[a] = qc - np.mean(qc) + J * (U @ np.linalg.solve(M, grad))
    return out


def gcomp(
    d: HierarchicalDataset,
    q_learner: ModelSpec,
    options: TmleOptions | None = None,
    inference: str = "fixed",
) -> TmleResult:
    """Plug-in mean of ``Q^c(1, .) - Q^c(0, .)`` over the observed clusters.

    Parameters
    ----------
    inference : {"fixed", "delta"}
        ``"fixed"`` uses ``Q^c_j(a) - psi(a)``, treating the outcome fit as
        known. ``"delta"`` adds the GLM estimating-equation term and is
        available only for a single learner.
    """
    options = options or TmleOptions()
    if inference not in ("fixed", "delta"):
        raise ConfigurationError(f"unknown G-computation inference {inference!r}")
    qfit = fit_outcome(d, q_learner, Level.CLUSTER, options)
    q = {a: qfit.predict(d, a)[0] for a in (1, 0)}
    psi = {a: float(np.mean(q[a])) for a in (1, 0)}
    if inference == "delta":
        if not isinstance(qfit.spec, LearnerSpec):
            raise ConfigurationError("delta-method G-computation inference needs a single learner")
        ic = _delta_method_ic(d, qfit.spec, qfit.fit, options)
    else:
        ic = {a: q[a] - psi[a] for a in (1, 0)}
    diagnostics = {"inference": inference, "q_weights": qfit.meta_weights}
    return build_result("gcomp", "", psi[1], psi[0], ic[1], ic[0], diagnostics=diagnostics)
