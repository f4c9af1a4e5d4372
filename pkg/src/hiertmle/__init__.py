"""Targeted maximum likelihood estimation for clustered data with a cluster-level exposure."""

from .data import (
    Cluster,
    HierarchicalDataset,
    IndividualRecord,
    WeightScheme,
    aggregate_covariates,
    cluster_outcome,
    load_csv,
    write_csv,
)
from .errors import (
    ConfigurationError,
    DataError,
    EstimationError,
    HierTmleError,
    PositivityError,
    RankDeficiencyError,
    TargetingError,
)
from .estimators import (
    KnownPropensity,
    NuisanceEstimates,
    TmleOptions,
    TmleResult,
    adaptive_prespec,
    clever_covariate,
    eic_cluster,
    eic_individual,
    fluctuate,
    gcomp,
    iptw,
    tmle_cluster,
    tmle_individual,
    unadjusted,
)
from .glm import DesignMatrix, GlmFit, fit_glm, predict_glm
from .simulation import ReplicationReport, Sim1Config, SimulatedWorld, copula_uniforms, replicate, simulate_world, true_ate
from .superlearner import LearnerSpec, SuperLearnerConfig, cv_risk, fit_superlearner, make_folds, sl_predict

__version__ = "0.1.0"
