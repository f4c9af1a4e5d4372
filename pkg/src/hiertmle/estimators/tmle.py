"""Cluster-level (Model I) and individual-level (Model II) TMLE.

Both estimators follow the same eight steps: fit the outcome regression,
fit (or assign) the propensity score, build clever covariates for
``a = 1`` and ``a = 0``, fit one fluctuation per level, update, plug in,
and evaluate the influence curve at the targeted fit. They differ in the
unit at which those steps run. Model I works with one row per cluster
(individual-level outcome learners are first averaged within cluster);
Model II pools individuals with weights ``alpha_ij`` and only collapses to
clusters for the final average and the influence curve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import HierarchicalDataset
from ..superlearner import Level, SuperLearnerFit
from .inference import TmleResult, build_result
from .nuisance import (
    ModelSpec,
    NuisanceEstimates,
    OutcomeFit,
    PropensityFit,
    PropensitySpec,
    TmleOptions,
    fit_outcome,
    fit_propensity,
    nuisance_estimates,
)
from .targeting import clever_covariate, fluctuate_detail, update

_MODEL = {Level.CLUSTER: "I", Level.INDIVIDUAL: "II"}


def eic_cluster(d: HierarchicalDataset, nuisances: NuisanceEstimates, psi: float, a: int) -> np.ndarray:
    """Plug-in ``D^I`` per cluster: ``H (Y^c - Q(A)) + Q(a) - psi``.

    ``nuisances`` must hold cluster-level arrays (length J).
    """
    h = clever_covariate(d.exposure, nuisances.g_1, a)
    return h * (d.cluster_outcomes - nuisances.qbar_obs) + nuisances.qbar(a) - psi


def eic_individual(d: HierarchicalDataset, nuisances: NuisanceEstimates, psi: float, a: int) -> np.ndarray:
    """Plug-in ``D^II`` per cluster.

    The individual terms ``H_ij (Y_ij - Q_ij(A)) + Q_ij(a)`` are summed
    within cluster with weights ``alpha_ij`` and ``psi`` is subtracted once
    per cluster. ``nuisances`` must hold individual-level arrays (length n).
    """
    h = clever_covariate(d.exposure_individual(), nuisances.g_1, a)
    inner = h * (d.outcome - nuisances.qbar_obs) + nuisances.qbar(a)
    return d.weighted_cluster_mean(inner) - psi


@dataclass(frozen=True, eq=False)
class _Arm:
    epsilon: float
    method: str
    psi: float
    targeted: NuisanceEstimates


def _units(d: HierarchicalDataset, level: Level):
    if level is Level.CLUSTER:
        return d.cluster_outcomes, np.ones(d.n_clusters), d.exposure
    return d.outcome, d.weights, d.exposure_individual()


def _collapse(d: HierarchicalDataset, values: np.ndarray, level: Level) -> np.ndarray:
    return values if level is Level.CLUSTER else d.weighted_cluster_mean(values)


def target_arm(
    d: HierarchicalDataset, nz: NuisanceEstimates, level: Level, a: int, epsilon: float | None = None
) -> _Arm:
    """Fluctuate (unless ``epsilon`` is given), update and plug in for one exposure level."""
    y, w, exposure = _units(d, level)
    h_obs = clever_covariate(exposure, nz.g_1, a)
    if epsilon is None:
        epsilon, method = fluctuate_detail(y, nz.qbar_obs, h_obs, w)
    else:
        method = "given"
    g_a = nz.g_1 if a == 1 else 1.0 - nz.g_1
    q_a = update(nz.qbar(a), epsilon, 1.0 / g_a)
    q_obs = update(nz.qbar_obs, epsilon, h_obs)
    psi = float(np.mean(_collapse(d, q_a, level)))
    targeted = NuisanceEstimates(
        qbar_obs=q_obs,
        qbar_1=q_a if a == 1 else nz.qbar_1,
        qbar_0=q_a if a == 0 else nz.qbar_0,
        g_1=nz.g_1,
        truncation_level=nz.truncation_level,
        n_truncated=nz.n_truncated,
    )
    return _Arm(float(epsilon), method, psi, targeted)


def arm_ic(d: HierarchicalDataset, arm: _Arm, level: Level, a: int, psi: float | None = None) -> np.ndarray:
    psi = arm.psi if psi is None else psi
    if level is Level.CLUSTER:
        return eic_cluster(d, arm.targeted, psi, a)
    return eic_individual(d, arm.targeted, psi, a)


def run_tmle(
    d: HierarchicalDataset,
    qfit: OutcomeFit,
    gfit: PropensityFit,
    level: Level,
    options: TmleOptions,
    estimator: str,
) -> TmleResult:
    """Targeting and inference given already-fitted nuisance models."""
    nz = nuisance_estimates(d, qfit, gfit, level, options)
    arms = {a: target_arm(d, nz, level, a) for a in (1, 0)}
    ic = {a: arm_ic(d, arms[a], level, a) for a in (1, 0)}
    diagnostics = {
        "level": level.value,
        "g_truncation": options.g_bound,
        "n_truncated": nz.n_truncated,
        "fluctuation": {str(a): arms[a].method for a in (1, 0)},
        "score_sum": float(np.sum(ic[1] - ic[0])),
        "q_weights": qfit.meta_weights,
    }
    if gfit.fit is not None:
        diagnostics["g_weights"] = _g_weights(gfit)
    return build_result(
        estimator,
        _MODEL[level],
        arms[1].psi,
        arms[0].psi,
        ic[1],
        ic[0],
        arms[1].epsilon,
        arms[0].epsilon,
        diagnostics,
    )


def _g_weights(gfit: PropensityFit) -> dict[str, float]:
    if isinstance(gfit.fit, SuperLearnerFit):
        return gfit.fit.weights_by_label
    return {gfit.spec.label: 1.0}


def tmle_cluster(
    d: HierarchicalDataset,
    q_learner: ModelSpec,
    g_learner: PropensitySpec,
    options: TmleOptions | None = None,
    estimator: str = "tmle-cluster",
) -> TmleResult:
    """Cluster-level TMLE of the treatment-specific mean cluster outcomes.

    Parameters
    ----------
    d : HierarchicalDataset
    q_learner : LearnerSpec, sequence of LearnerSpec, or SuperLearnerConfig
        Outcome regression for ``Y^c``. Cluster-level and individual-level
        learners may be mixed; individual-level ones are averaged within
        cluster with weights ``alpha_ij`` before the ensemble and the
        targeting step.
    g_learner : cluster-level learner(s), KnownPropensity or float
        Cluster-level propensity score.
    options : TmleOptions, optional

    Returns
    -------
    TmleResult
        With ``model == "I"``.
    """
    options = options or TmleOptions()
    qfit = fit_outcome(d, q_learner, Level.CLUSTER, options)
    gfit = fit_propensity(d, g_learner, Level.CLUSTER, options)
    return run_tmle(d, qfit, gfit, Level.CLUSTER, options, estimator)


def tmle_individual(
    d: HierarchicalDataset,
    q_learner: ModelSpec,
    g_learner: PropensitySpec,
    options: TmleOptions | None = None,
    estimator: str = "tmle-individual",
) -> TmleResult:
    """Individual-level TMLE under the working-model restriction.

    Outcome and propensity learners are pooled individual-level regressions
    on ``(A, E, W_ij)`` weighted by ``alpha_ij``. The influence curve is
    collapsed to one value per cluster before the variance is taken.
    """
    options = options or TmleOptions()
    qfit = fit_outcome(d, q_learner, Level.INDIVIDUAL, options)
    gfit = fit_propensity(d, g_learner, Level.INDIVIDUAL, options)
    return run_tmle(d, qfit, gfit, Level.INDIVIDUAL, options, estimator)
