"""Fitting and predicting the outcome regression and the propensity score.

Outcome models are a single :class:`~hiertmle.superlearner.LearnerSpec`
(fitted directly, no cross-validation), a sequence of them, or a
:class:`~hiertmle.superlearner.SuperLearnerConfig`. Propensity models may
additionally be a :class:`KnownPropensity`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from ..data import HierarchicalDataset
from ..errors import ConfigurationError, DomainError
from ..glm import GlmFit
from ..superlearner import (
    Level,
    LearnerSpec,
    Loss,
    SuperLearnerConfig,
    SuperLearnerFit,
    Target,
    fit_learner,
    fit_superlearner,
    predict_learner,
    sl_predict,
    validate_learner,
)


@dataclass(frozen=True)
class KnownPropensity:
    """A propensity score fixed by design.

    ``value`` is ``P(A = 1 | .)``: a scalar, or one value per cluster.
    """

    value: float | np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.value, dtype=float)
        if np.any((v <= 0) | (v >= 1)) or not np.all(np.isfinite(v)):
            raise DomainError("known propensity must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class TmleOptions:
    """Numerical settings shared by all estimators.

    ``g_bound`` truncates propensities to ``[g_bound, 1 - g_bound]``;
    ``q_bound`` clips outcome predictions before any logit.
    ``V``, ``seed`` and ``sl_mode`` apply when a learner sequence (rather
    than a full config) is given.
    """

    g_bound: float = 0.01
    q_bound: float = 1e-6
    V: int | None = None
    seed: int = 0
    sl_mode: str = "convex"

    def __post_init__(self) -> None:
        if not 0 <= self.g_bound < 0.5:
            raise ConfigurationError(f"g_bound must lie in [0, 0.5), got {self.g_bound}")
        if not 0 < self.q_bound < 0.5:
            raise ConfigurationError(f"q_bound must lie in (0, 0.5), got {self.q_bound}")


ModelSpec = Union[LearnerSpec, SuperLearnerConfig, Sequence[LearnerSpec]]
PropensitySpec = Union[ModelSpec, KnownPropensity, float]


def _as_config(spec, options: TmleOptions, loss: Loss) -> LearnerSpec | SuperLearnerConfig:
    if isinstance(spec, (LearnerSpec, SuperLearnerConfig)):
        if isinstance(spec, SuperLearnerConfig) and spec.loss is None:
            return SuperLearnerConfig(spec.library, loss, spec.V, spec.seed, spec.mode)
        return spec
    try:
        library = tuple(spec)
    except TypeError:
        raise ConfigurationError(f"cannot interpret {spec!r} as a learner specification") from None
    if not all(isinstance(x, LearnerSpec) for x in library):
        raise ConfigurationError("learner sequences must contain LearnerSpec objects")
    return SuperLearnerConfig(library, loss, options.V, options.seed, options.sl_mode)


def _learners(spec) -> tuple[LearnerSpec, ...]:
    return (spec,) if isinstance(spec, LearnerSpec) else spec.library


@dataclass(frozen=True, eq=False)
class OutcomeFit:
    """A fitted outcome regression that can predict on any compatible dataset."""

    spec: LearnerSpec | SuperLearnerConfig
    fit: GlmFit | SuperLearnerFit

    def predict(self, d: HierarchicalDataset, exposure: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(cluster, individual) predictions, at observed A or at ``exposure``."""
        if isinstance(self.fit, SuperLearnerFit):
            p = sl_predict(self.fit, d, exposure)
            return p.cluster, p.individual
        return predict_learner(self.spec, self.fit, d, Target.OUTCOME, exposure)

    @property
    def meta_weights(self) -> dict[str, float]:
        if isinstance(self.fit, SuperLearnerFit):
            return self.fit.weights_by_label
        return {self.spec.label: 1.0}


@dataclass(frozen=True, eq=False)
class PropensityFit:
    spec: PropensitySpec
    fit: GlmFit | SuperLearnerFit | None

    def predict(self, d: HierarchicalDataset) -> tuple[np.ndarray, np.ndarray]:
        """(cluster, individual) ``P(A = 1 | .)`` before truncation."""
        if isinstance(self.spec, KnownPropensity):
            v = np.broadcast_to(np.asarray(self.spec.value, dtype=float), (d.n_clusters,)).copy()
            return v, d.broadcast(v)
        if isinstance(self.fit, SuperLearnerFit):
            p = sl_predict(self.fit, d)
            return p.cluster, p.individual
        return predict_learner(self.spec, self.fit, d, Target.EXPOSURE)


def fit_outcome(d: HierarchicalDataset, spec: ModelSpec, level: Level, options: TmleOptions) -> OutcomeFit:
    """Fit the outcome regression for a cluster-level (Model I) or individual-level (Model II) TMLE."""
    loss = Loss.CLUSTER_NLL if level is Level.CLUSTER else Loss.INDIVIDUAL_NLL
    spec = _as_config(spec, options, loss)
    if level is Level.INDIVIDUAL and any(lr.level is not Level.INDIVIDUAL for lr in _learners(spec)):
        raise ConfigurationError("the individual-level TMLE needs individual-level outcome learners")
    for lr in _learners(spec):
        validate_learner(lr, d)
    if isinstance(spec, LearnerSpec):
        return OutcomeFit(spec, fit_learner(spec, d, Target.OUTCOME))
    return OutcomeFit(spec, fit_superlearner(d, spec, target=Target.OUTCOME))


def fit_propensity(d: HierarchicalDataset, spec: PropensitySpec, level: Level, options: TmleOptions) -> PropensityFit:
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        spec = KnownPropensity(float(spec))
    if isinstance(spec, KnownPropensity):
        v = np.asarray(spec.value)
        if v.ndim and v.shape != (d.n_clusters,):
            raise ConfigurationError("per-cluster known propensity must have one value per cluster")
        return PropensityFit(spec, None)
    loss = Loss.CLUSTER_NLL if level is Level.CLUSTER else Loss.INDIVIDUAL_NLL
    spec = _as_config(spec, options, loss)
    if any(lr.level is not level for lr in _learners(spec)):
        raise ConfigurationError(f"propensity learners must all be {level.value}-level here")
    for lr in _learners(spec):
        validate_learner(lr, d)
    if isinstance(spec, LearnerSpec):
        return PropensityFit(spec, fit_learner(spec, d, Target.EXPOSURE))
    return PropensityFit(spec, fit_superlearner(d, spec, target=Target.EXPOSURE))


@dataclass(frozen=True, eq=False)
class NuisanceEstimates:
    """Outcome-regression and propensity predictions at one unit level.

    Arrays have length J for cluster-level estimates and n for
    individual-level ones.
    """

    qbar_obs: np.ndarray
    qbar_1: np.ndarray
    qbar_0: np.ndarray
    g_1: np.ndarray
    truncation_level: float = 0.0
    n_truncated: int = 0

    def qbar(self, a: int) -> np.ndarray:
        return self.qbar_1 if a == 1 else self.qbar_0


def truncate(g1: np.ndarray, bound: float) -> tuple[np.ndarray, int]:
    g1 = np.asarray(g1, dtype=float)
    clipped = np.clip(g1, bound, 1.0 - bound)
    return clipped, int(np.count_nonzero(clipped != g1))


def nuisance_estimates(
    d: HierarchicalDataset, qfit: OutcomeFit, gfit: PropensityFit, level: Level, options: TmleOptions
) -> NuisanceEstimates:
    k = 0 if level is Level.CLUSTER else 1
    lo, hi = options.q_bound, 1.0 - options.q_bound
    q_obs = np.clip(qfit.predict(d)[k], lo, hi)
    q1 = np.clip(qfit.predict(d, 1)[k], lo, hi)
    q0 = np.clip(qfit.predict(d, 0)[k], lo, hi)
    g1, n_trunc = truncate(gfit.predict(d)[k], options.g_bound)
    return NuisanceEstimates(q_obs, q1, q0, g1, options.g_bound, n_trunc)
