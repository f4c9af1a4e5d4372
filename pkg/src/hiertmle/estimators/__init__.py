"""TMLEs, comparators, targeting and influence-curve inference."""

from .adaptive import AdaptiveResult, CandidateRecord, adaptive_prespec, candidate_learners
from .comparators import gcomp, iptw, unadjusted
from .inference import TmleResult, build_result, ic_variance, wald_p_value
from .nuisance import (
    KnownPropensity,
    NuisanceEstimates,
    OutcomeFit,
    PropensityFit,
    TmleOptions,
    fit_outcome,
    fit_propensity,
    nuisance_estimates,
    truncate,
)
from .targeting import clever_covariate, fluctuate, fluctuate_detail, update
from .tmle import eic_cluster, eic_individual, run_tmle, tmle_cluster, tmle_individual

__all__ = [
    "AdaptiveResult",
    "CandidateRecord",
    "KnownPropensity",
    "NuisanceEstimates",
    "OutcomeFit",
    "PropensityFit",
    "TmleOptions",
    "TmleResult",
    "adaptive_prespec",
    "build_result",
    "candidate_learners",
    "clever_covariate",
    "eic_cluster",
    "eic_individual",
    "fit_outcome",
    "fit_propensity",
    "fluctuate",
    "fluctuate_detail",
    "gcomp",
    "ic_variance",
    "iptw",
    "nuisance_estimates",
    "run_tmle",
    "tmle_cluster",
    "tmle_individual",
    "truncate",
    "unadjusted",
    "update",
    "wald_p_value",
]
