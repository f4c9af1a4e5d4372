"""Adaptive pre-specification of the adjustment set in randomized trials.

Each candidate adjustment set defines one TMLE: the outcome regression
adjusts for the set, and the known propensity is re-estimated by a
logistic regression on the same set (intercept-only for the empty set).
The candidate whose cross-validated influence-curve variance is smallest
is selected; ties go to the earlier candidate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..data import AGGREGATE_SUFFIX, HierarchicalDataset
from ..errors import ConfigurationError, EstimationError
from ..superlearner import Level, LearnerSpec, make_folds
from .inference import TmleResult
from .nuisance import KnownPropensity, TmleOptions, fit_outcome, fit_propensity, nuisance_estimates
from .tmle import arm_ic, run_tmle, target_arm


@dataclass(frozen=True)
class CandidateRecord:
    adjustment: tuple[str, ...]
    cv_variance: float
    variance: float
    ate: float
    selected: bool = False


@dataclass(frozen=True, eq=False)
class AdaptiveResult:
    result: TmleResult
    selected: tuple[str, ...]
    table: tuple[CandidateRecord, ...]
    diagnostics: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        out = self.result.to_dict()
        out["selection"] = {
            "selected": list(self.selected),
            "candidates": [
                {
                    "adjustment": list(r.adjustment),
                    "cv_variance": r.cv_variance,
                    "variance": r.variance,
                    "ate": r.ate,
                    "selected": r.selected,
                }
                for r in self.table
            ],
        }
        return out


def candidate_learners(d: HierarchicalDataset, adjustment: Sequence[str], level: Level) -> tuple[LearnerSpec, LearnerSpec]:
    """(outcome learner, propensity learner) for one adjustment set.

    For the cluster-level TMLE an adjustment set naming individual columns
    gives a pooled individual-level outcome learner (averaged within
    cluster) and a propensity on the cluster means of those columns.
    """
    adjustment = tuple(adjustment)
    if level is Level.INDIVIDUAL:
        return LearnerSpec(Level.INDIVIDUAL, adjustment), LearnerSpec(Level.INDIVIDUAL, adjustment)
    individual = any(name in d.cov_names for name in adjustment)
    q = LearnerSpec(Level.INDIVIDUAL if individual else Level.CLUSTER, adjustment)
    g_adj = tuple(name + AGGREGATE_SUFFIX if name in d.cov_names else name for name in adjustment)
    return q, LearnerSpec(Level.CLUSTER, g_adj)


def _cv_variance(d, q_spec, g_spec, level, options, folds) -> float:
    """Mean squared out-of-fold influence curve divided by J.

    For each fold the TMLE (nuisance fits, fluctuations and ``psi``) is
    computed on the training clusters and its influence curve evaluated on
    the validation clusters.
    """
    J = d.n_clusters
    ic = np.empty(J)
    for v in range(folds.V):
        valid = folds.validation(v)
        train = d.subset(np.flatnonzero(folds.folds != v))
        qfit = fit_outcome(train, q_spec, level, options)
        gfit = fit_propensity(train, g_spec, level, options)
        nz_train = nuisance_estimates(train, qfit, gfit, level, options)
        arms = {a: target_arm(train, nz_train, level, a) for a in (1, 0)}
        # Predictions are row-wise, so evaluating on the full data and
        # keeping validation clusters avoids one-cluster datasets.
        nz_full = nuisance_estimates(d, qfit, gfit, level, options)
        full = {a: target_arm(d, nz_full, level, a, epsilon=arms[a].epsilon) for a in (1, 0)}
        d_ic = arm_ic(d, full[1], level, 1, arms[1].psi) - arm_ic(d, full[0], level, 0, arms[0].psi)
        ic[valid] = d_ic[valid]
    return float(np.mean(ic**2) / J)


def adaptive_prespec(
    d: HierarchicalDataset,
    candidate_adjustments: Sequence[Sequence[str]],
    known_g: float = 0.5,
    model: str = "I",
    options: TmleOptions | None = None,
    estimate_g: bool = True,
) -> AdaptiveResult:
    """Select the adjustment set that minimises the cross-validated variance.

    Parameters
    ----------
    d : HierarchicalDataset
    candidate_adjustments : sequence of column-name sequences
        The empty set gives the unadjusted TMLE.
    known_g : float
        Randomization probability. Used directly when ``estimate_g`` is
        False; otherwise the propensity is re-estimated per candidate.
    model : {"I", "II"}
        Cluster-level or individual-level TMLE.
    options : TmleOptions, optional
        ``V`` and ``seed`` set the folds of the selector.

    Raises
    ------
    ConfigurationError
        If there are no candidates.
    """
    options = options or TmleOptions()
    candidates = [tuple(c) for c in candidate_adjustments]
    if not candidates:
        raise ConfigurationError("adaptive pre-specification needs at least one candidate")
    if model not in ("I", "II"):
        raise ConfigurationError(f"model must be 'I' or 'II', got {model!r}")
    level = Level.CLUSTER if model == "I" else Level.INDIVIDUAL
    known = KnownPropensity(known_g)
    folds = make_folds(d, options.V, options.seed)

    rows, fits, notes = [], [], []
    for adj in candidates:
        q_spec, g_spec = candidate_learners(d, adj, level)
        g_spec = g_spec if estimate_g else known
        try:
            res = run_tmle(
                d,
                fit_outcome(d, q_spec, level, options),
                fit_propensity(d, g_spec, level, options),
                level,
                options,
                "adaptive-prespec",
            )
        except EstimationError as exc:
            notes.append(f"{'+'.join(adj) or '(none)'}: full-data fit failed ({exc})")
            rows.append((adj, np.inf, np.nan, np.nan))
            fits.append(None)
            continue
        try:
            cv_var = _cv_variance(d, q_spec, g_spec, level, options, folds)
        except EstimationError as exc:
            notes.append(f"{'+'.join(adj) or '(none)'}: cross-validation failed ({exc})")
            cv_var = np.inf
        rows.append((adj, cv_var, res.variance, res.ate))
        fits.append(res)

    cv = np.array([r[1] for r in rows])
    if not np.any(np.isfinite(cv)):
        if all(f is None for f in fits):
            raise EstimationError("every candidate TMLE failed: " + "; ".join(notes))
        best = next(k for k, f in enumerate(fits) if f is not None)
    else:
        best = int(np.argmin(cv))  # first minimum on ties
    table = tuple(CandidateRecord(a, float(c), float(v), float(t), k == best) for k, (a, c, v, t) in enumerate(rows))
    chosen = fits[best]
    chosen.diagnostics["selected_adjustment"] = list(candidates[best])
    return AdaptiveResult(chosen, candidates[best], table, tuple(notes))
