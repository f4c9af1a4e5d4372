"""Named estimator recipes shared by the simulation harness and the CLI.

Every recipe maps a dataset (plus, optionally, the true cluster propensity
when the data were simulated) to a :class:`TmleResult`. Adjustment sets
are derived from the dataset schema: cluster-level learners use the
environmental columns ``E`` and the cluster means ``W_c`` of the
individual columns, individual-level learners use ``E`` and ``W``.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .data import HierarchicalDataset, aggregate_name
from .errors import ConfigurationError
from .estimators import (
    KnownPropensity,
    TmleOptions,
    TmleResult,
    adaptive_prespec,
    gcomp,
    iptw,
    tmle_cluster,
    tmle_individual,
    unadjusted,
)
from .superlearner import Level, LearnerSpec

Recipe = Callable[[HierarchicalDataset, "np.ndarray | None", TmleOptions], TmleResult]


def cluster_adjustment(d: HierarchicalDataset) -> tuple[str, ...]:
    return tuple(d.env_names) + tuple(aggregate_name(w) for w in d.cov_names)


def individual_adjustment(d: HierarchicalDataset) -> tuple[str, ...]:
    return tuple(d.env_names) + tuple(d.cov_names)


def cluster_learner(d: HierarchicalDataset) -> LearnerSpec:
    return LearnerSpec(Level.CLUSTER, cluster_adjustment(d))


def individual_learner(d: HierarchicalDataset) -> LearnerSpec:
    return LearnerSpec(Level.INDIVIDUAL, individual_adjustment(d))


def _known(true_g):
    if true_g is None:
        raise ConfigurationError("this estimator needs the true propensity (simulated data only)")
    return KnownPropensity(np.asarray(true_g, dtype=float))


def _intercept_only(level):
    return LearnerSpec(level, (), exposure_term=False, label=f"{level.value}:intercept-only")


def _adaptive(d, true_g, options):
    adj = cluster_adjustment(d)
    candidates = [()] + [(c,) for c in adj] + ([adj] if len(adj) > 1 else [])
    return adaptive_prespec(d, candidates, known_g=0.5, model="I", options=options).result


RECIPES: dict[str, Recipe] = {
    "unadjusted": lambda d, g, o: unadjusted(d),
    "iptw": lambda d, g, o: iptw(d, cluster_learner(d), o),
    "gcomp": lambda d, g, o: gcomp(d, cluster_learner(d), o, inference="delta"),
    "tmle-ia": lambda d, g, o: tmle_cluster(d, cluster_learner(d), cluster_learner(d), o, "tmle-ia"),
    "tmle-ib": lambda d, g, o: tmle_cluster(d, individual_learner(d), cluster_learner(d), o, "tmle-ib"),
    "tmle-ii": lambda d, g, o: tmle_individual(d, individual_learner(d), individual_learner(d), o, "tmle-ii"),
    "tmle-cluster": lambda d, g, o: tmle_cluster(d, cluster_learner(d), cluster_learner(d), o, "tmle-cluster"),
    "tmle-individual": lambda d, g, o: tmle_individual(d, individual_learner(d), individual_learner(d), o, "tmle-individual"),
    "adaptive-prespec": _adaptive,
    # Double-robustness checks: true propensity, deliberately wrong outcome model.
    "tmle-ia-known-g": lambda d, g, o: tmle_cluster(
        d, _intercept_only(Level.CLUSTER), _known(g), o, "tmle-ia-known-g"
    ),
    "tmle-ii-known-g": lambda d, g, o: tmle_individual(
        d, _intercept_only(Level.INDIVIDUAL), _known(g), o, "tmle-ii-known-g"
    ),
}

SIM1_ESTIMATORS = ("unadjusted", "tmle-ia", "tmle-ib", "tmle-ii")


def resolve(names) -> tuple[str, ...]:
    """Validate a comma-separated string or sequence of recipe names."""
    if isinstance(names, str):
        names = [n.strip() for n in names.split(",") if n.strip()]
    names = tuple(names)
    if not names:
        raise ConfigurationError("no estimators requested")
    unknown = [n for n in names if n not in RECIPES]
    if unknown:
        raise ConfigurationError(f"unknown estimator(s) {unknown}; choose from {sorted(RECIPES)}")
    return names


def run(name: str, d: HierarchicalDataset, true_g=None, options: TmleOptions | None = None) -> TmleResult:
    return RECIPES[resolve([name])[0]](d, true_g, options or TmleOptions())
