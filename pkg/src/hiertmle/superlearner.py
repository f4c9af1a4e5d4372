"""V-fold cross-validated ensembles of cluster-level and pooled individual-level GLMs.

A library mixes two kinds of candidate:

* cluster-level learners regress ``Y^c`` (or ``A``) on ``E`` and cluster
  aggregates of ``W``, one row per cluster;
* individual-level learners pool all individuals, regress ``Y_ij`` on ``A``,
  ``E`` and the person's own ``W_ij`` with weights ``alpha_ij``, and are turned
  into cluster predictions by the weighted within-cluster average
  ``sum_i alpha_ij q_ij``.

Cross-validation always splits clusters, never individuals. The meta-learner
is either the cross-validation selector (``mode="discrete"``) or the convex
combination of out-of-fold predictions minimising the same loss
(``mode="convex"``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import AGGREGATE_SUFFIX, HierarchicalDataset, aggregate_covariates
from .errors import ConfigurationError, EstimationError, SchemaError
from .glm import DesignMatrix, Family, GlmFit, fit_glm, predict_glm

PRED_CLIP = 1e-6


class Level(str, Enum):
    CLUSTER = "cluster"
    INDIVIDUAL = "individual"


class Loss(str, Enum):
    CLUSTER_NLL = "cluster_nll"
    INDIVIDUAL_NLL = "individual_nll"
    CLUSTER_MSE = "cluster_mse"
    INDIVIDUAL_MSE = "individual_mse"

    @property
    def individual(self) -> bool:
        return self in (Loss.INDIVIDUAL_NLL, Loss.INDIVIDUAL_MSE)

    @property
    def nll(self) -> bool:
        return self in (Loss.CLUSTER_NLL, Loss.INDIVIDUAL_NLL)


class Target(str, Enum):
    OUTCOME = "outcome"
    EXPOSURE = "exposure"


def _enum(cls, value):
    if isinstance(value, cls):
        return value
    try:
        return cls(str(value).lower().replace("-", "_"))
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ConfigurationError(f"unknown {cls.__name__.lower()} {value!r} (expected one of {choices})") from None


@dataclass(frozen=True)
class LearnerSpec:
    """A main-terms GLM over a named adjustment set.

    ``exposure_term`` controls whether ``A`` enters outcome regressions; it is
    ignored when the learner models the exposure itself.
    """

    level: Level
    adjustment: tuple[str, ...] = ()
    family: Family = Family.LOGISTIC
    label: str = ""
    exposure_term: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "level", _enum(Level, self.level))
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "adjustment", tuple(self.adjustment))
        if not self.label:
            adj = "+".join(self.adjustment) or "1"
            object.__setattr__(self, "label", f"{self.level.value}:{adj}")

    @classmethod
    def from_dict(cls, spec: dict) -> "LearnerSpec":
        unknown = set(spec) - {"level", "adjustment", "family", "label", "exposure_term"}
        if unknown:
            raise ConfigurationError(f"unknown learner fields {sorted(unknown)}")
        if "level" not in spec:
            raise ConfigurationError("learner needs a 'level'")
        return cls(
            level=spec["level"],
            adjustment=tuple(spec.get("adjustment", ())),
            family=spec.get("family", "logistic"),
            label=spec.get("label", ""),
            exposure_term=bool(spec.get("exposure_term", True)),
        )


@dataclass(frozen=True)
class SuperLearnerConfig:
    """Everything needed to fit a Super Learner, minus the data."""

    library: tuple[LearnerSpec, ...]
    loss: Loss | None = None
    V: int | None = None
    seed: int = 0
    mode: str = "convex"

    def __post_init__(self) -> None:
        object.__setattr__(self, "library", tuple(self.library))
        if not self.library:
            raise ConfigurationError("Super Learner library is empty")
        if self.loss is not None:
            object.__setattr__(self, "loss", _enum(Loss, self.loss))
        if self.mode not in ("convex", "discrete"):
            raise ConfigurationError(f"unknown meta-learner mode {self.mode!r}")


def load_library(path: str | Path) -> SuperLearnerConfig:
    """Read a library from JSON or YAML.

    The file is either a list of learner mappings or a mapping with a
    ``learners`` list and optional ``loss``, ``V``, ``seed`` and ``mode``.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        raw = yaml.safe_load(text)
    else:
        raw = json.loads(text)
    return library_from_config(raw)


def library_from_config(raw) -> SuperLearnerConfig:
    if isinstance(raw, list):
        raw = {"learners": raw}
    if not isinstance(raw, dict) or "learners" not in raw:
        raise ConfigurationError("library config needs a 'learners' list")
    learners = tuple(LearnerSpec.from_dict(x) for x in raw["learners"])
    return SuperLearnerConfig(
        library=learners,
        loss=raw.get("loss"),
        V=raw.get("V"),
        seed=int(raw.get("seed", 0)),
        mode=raw.get("mode", "convex"),
    )


# ---------------------------------------------------------------------------
# Design construction
# ---------------------------------------------------------------------------


def _column(d: HierarchicalDataset, name: str, level: Level) -> np.ndarray:
    if name in d.env_names:
        col = d.env[:, d.env_names.index(name)]
        return col if level is Level.CLUSTER else d.broadcast(col)
    if name in d.cov_names:
        if level is Level.CLUSTER:
            raise SchemaError(
                f"individual column {name!r} used by a cluster-level learner; use {name + AGGREGATE_SUFFIX!r}"
            )
        return d.cov[:, d.cov_names.index(name)]
    base = name[: -len(AGGREGATE_SUFFIX)]
    if name.endswith(AGGREGATE_SUFFIX) and base in d.cov_names:
        col = aggregate_covariates(d, [base])[base]
        return col if level is Level.CLUSTER else d.broadcast(col)
    raise SchemaError(f"unknown adjustment column {name!r}")


def validate_learner(learner: LearnerSpec, d: HierarchicalDataset) -> None:
    for name in learner.adjustment:
        _column(d, name, learner.level)


def learner_design(
    learner: LearnerSpec,
    d: HierarchicalDataset,
    target: Target | str = Target.OUTCOME,
    exposure_override: int | None = None,
) -> DesignMatrix:
    """Regressors of ``learner`` at its own level (J rows or n rows)."""
    target = _enum(Target, target)
    level = learner.level
    n = d.n_clusters if level is Level.CLUSTER else d.n_individuals
    cols: dict[str, np.ndarray] = {}
    if target is Target.OUTCOME and learner.exposure_term:
        if exposure_override is None:
            a = d.exposure.astype(float)
            cols["A"] = a if level is Level.CLUSTER else d.broadcast(a)
        else:
            cols["A"] = np.full(n, float(exposure_override))
    for name in learner.adjustment:
        cols[name] = _column(d, name, level)
    return DesignMatrix.from_columns(cols, n=n)


def learner_response(learner: LearnerSpec, d: HierarchicalDataset, target: Target | str = Target.OUTCOME):
    """(response, weights) at the learner's level."""
    target = _enum(Target, target)
    if learner.level is Level.CLUSTER:
        y = d.cluster_outcomes if target is Target.OUTCOME else d.exposure.astype(float)
        return np.asarray(y, dtype=float), np.ones(d.n_clusters)
    y = d.outcome if target is Target.OUTCOME else d.exposure_individual()
    return np.asarray(y, dtype=float), d.weights


def fit_learner(learner: LearnerSpec, d: HierarchicalDataset, target: Target | str = Target.OUTCOME) -> GlmFit:
    X = learner_design(learner, d, target)
    y, w = learner_response(learner, d, target)
    return fit_glm(X, y, weights=w, family=learner.family)


def predict_learner(
    learner: LearnerSpec,
    fit: GlmFit,
    d: HierarchicalDataset,
    target: Target | str = Target.OUTCOME,
    exposure_override: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(cluster predictions, individual predictions) for one fitted learner.

    Individual-level predictions are averaged within cluster with weights
    ``alpha_ij``; cluster-level predictions are repeated for every member.
    """
    q = predict_glm(fit, learner_design(learner, d, target, exposure_override))
    if learner.level is Level.CLUSTER:
        return q, d.broadcast(q)
    return d.weighted_cluster_mean(q), q


# ---------------------------------------------------------------------------
# Folds and cross-validated risk
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    V: int
    folds: np.ndarray  # fold index per cluster position
    ids: tuple[str, ...]

    @property
    def fold_of_cluster(self) -> dict[str, int]:
        return dict(zip(self.ids, map(int, self.folds)))

    def validation(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.folds == v)


def default_V(J: int) -> int:
    return 10 if J >= 30 else J


def make_folds(d: HierarchicalDataset, V: int | None = None, seed: int = 0) -> FoldAssignment:
    """Random balanced partition of clusters into ``V`` folds."""
    J = d.n_clusters
    V = default_V(J) if V is None else int(V)
    if V < 2 or V > J:
        raise ConfigurationError(f"need 2 <= V <= J={J}, got V={V}")
    perm = np.random.default_rng(seed).permutation(J)
    folds = np.empty(J, dtype=np.int64)
    folds[perm] = np.arange(J) % V
    return FoldAssignment(V=V, folds=folds, ids=d.ids)


def _clip(q):
    return np.clip(q, PRED_CLIP, 1.0 - PRED_CLIP)


def pointwise_loss(y: np.ndarray, q: np.ndarray, nll: bool) -> np.ndarray:
    if nll:
        q = _clip(q)
        return -(y * np.log(q) + (1.0 - y) * np.log1p(-q))
    return (y - q) ** 2


def cluster_losses(
    d: HierarchicalDataset,
    loss: Loss,
    q_cluster: np.ndarray,
    q_individual: np.ndarray,
    target: Target = Target.OUTCOME,
) -> np.ndarray:
    """Per-cluster loss of a set of predictions (length J)."""
    if loss.individual:
        y = d.outcome if target is Target.OUTCOME else d.exposure_individual()
        return d.weighted_cluster_mean(pointwise_loss(y, q_individual, loss.nll))
    y = d.cluster_outcomes if target is Target.OUTCOME else d.exposure.astype(float)
    return pointwise_loss(y, q_cluster, loss.nll)


def _fit_rows(learner, X: DesignMatrix, y, w, rows, diagnostics):
    try:
        fit = fit_glm(X.values[rows], y[rows], weights=w[rows], family=learner.family)
    except EstimationError as exc:
        diagnostics.append(f"{learner.label}: fold fit failed ({exc}); intercept-only fallback")
        ones = np.ones((rows.sum() if rows.dtype == bool else len(rows), 1))
        fit = fit_glm(ones, y[rows], weights=w[rows], family=learner.family)
        return fit, True
    return fit, False


def cv_predictions(
    learner: LearnerSpec,
    d: HierarchicalDataset,
    folds: FoldAssignment,
    target: Target | str = Target.OUTCOME,
    diagnostics: list | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-fold (cluster, individual) predictions of one learner."""
    target = _enum(Target, target)
    diagnostics = [] if diagnostics is None else diagnostics
    X = learner_design(learner, d, target)
    y, w = learner_response(learner, d, target)
    unit_fold = folds.folds if learner.level is Level.CLUSTER else d.broadcast(folds.folds)
    q = np.empty(len(y))
    for v in range(folds.V):
        train = unit_fold != v
        valid = ~train
        fit, fallback = _fit_rows(learner, X, y, w, train, diagnostics)
        Xv = X.values[valid][:, :1] if fallback else X.values[valid]
        q[valid] = predict_glm(fit, Xv)
    if learner.level is Level.CLUSTER:
        return q, d.broadcast(q)
    return d.weighted_cluster_mean(q), q


def cv_risk(
    learner: LearnerSpec,
    d: HierarchicalDataset,
    folds: FoldAssignment,
    loss: Loss | str = Loss.CLUSTER_NLL,
    target: Target | str = Target.OUTCOME,
) -> float:
    """Cross-validated risk: mean over clusters of the out-of-fold loss."""
    loss = _enum(Loss, loss)
    target = _enum(Target, target)
    qc, qi = cv_predictions(learner, d, folds, target)
    return float(np.mean(cluster_losses(d, loss, qc, qi, target)))


# ---------------------------------------------------------------------------
# Meta-learner
# ---------------------------------------------------------------------------


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _convex_weights(Z: np.ndarray, y: np.ndarray, unit_w: np.ndarray, nll: bool, start: int, J: int):
    """Minimise the weighted loss of ``Z @ w`` over the simplex by projected gradient."""
    K = Z.shape[1]

    def objective(w):
        q = Z @ w
        if nll:
            return float(-np.sum(unit_w * (y * np.log(q) + (1.0 - y) * np.log1p(-q))) / J)
        return float(np.sum(unit_w * (y - q) ** 2) / J)

    def gradient(w):
        q = Z @ w
        if nll:
            dq = -(y / q) + (1.0 - y) / (1.0 - q)
        else:
            dq = -2.0 * (y - q)
        return Z.T @ (unit_w * dq) / J

    w = np.zeros(K)
    w[start] = 1.0
    f = objective(w)
    g = gradient(w)
    step = 1.0
    for _ in range(10_000):
        while True:
            w_new = project_simplex(w - step * g)
            diff = w_new - w
            f_new = objective(w_new)
            if f_new <= f + g @ diff + (diff @ diff) / (2.0 * step) or step < 1e-20:
                break
            step *= 0.5
        if f_new > f:
            break
        g_new = gradient(w_new)
        dg = g_new - g
        done = f - f_new <= 1e-10 * 1e-4 and np.max(np.abs(diff)) <= 1e-12
        w, f, g = w_new, f_new, g_new
        if done:
            break
        # Barzilai-Borwein step for the next iteration.
        denom = diff @ dg
        step = (diff @ diff) / denom if denom > 1e-300 else 1.0
    return w, f


@dataclass(frozen=True, eq=False)
class SuperLearnerFit:
    library: tuple[LearnerSpec, ...]
    folds: FoldAssignment | None
    loss: Loss
    target: Target
    cv_risks: np.ndarray
    meta_weights: np.ndarray
    ensemble_cv_risk: float
    refit_learners: tuple[GlmFit, ...]
    mode: str
    diagnostics: tuple[str, ...] = field(default=())

    @property
    def weights_by_label(self) -> dict[str, float]:
        return {lr.label: float(w) for lr, w in zip(self.library, self.meta_weights)}


def _default_loss(library: Sequence[LearnerSpec]) -> Loss:
    if all(lr.level is Level.INDIVIDUAL for lr in library):
        return Loss.INDIVIDUAL_NLL
    return Loss.CLUSTER_NLL


def fit_superlearner(
    d: HierarchicalDataset,
    library: Sequence[LearnerSpec] | SuperLearnerConfig,
    loss: Loss | str | None = None,
    V: int | None = None,
    seed: int = 0,
    mode: str = "convex",
    target: Target | str = Target.OUTCOME,
) -> SuperLearnerFit:
    """Cross-validate every learner, build the meta-learner, refit on all data.

    Parameters
    ----------
    d : HierarchicalDataset
    library : sequence of LearnerSpec or SuperLearnerConfig
        A config overrides ``loss``, ``V``, ``seed`` and ``mode``.
    loss : Loss, optional
        Defaults to the individual-level NLL when every learner is
        individual-level and to the cluster-level NLL otherwise.
    V : int, optional
        Number of folds; 10 for J >= 30, otherwise leave-one-cluster-out.
    seed : int
        Seed for the fold assignment.
    mode : {"convex", "discrete"}
    target : {"outcome", "exposure"}
        Whether the library models ``Y`` or the propensity of ``A``.
    """
    if isinstance(library, SuperLearnerConfig):
        cfg = library
        library, loss, V, seed, mode = cfg.library, cfg.loss, cfg.V, cfg.seed, cfg.mode
    library = tuple(library)
    if not library:
        raise ConfigurationError("Super Learner library is empty")
    if mode not in ("convex", "discrete"):
        raise ConfigurationError(f"unknown meta-learner mode {mode!r}")
    target = _enum(Target, target)
    loss = _default_loss(library) if loss is None else _enum(Loss, loss)
    for lr in library:
        validate_learner(lr, d)

    folds = make_folds(d, V, seed)
    diagnostics: list[str] = []
    oof = [cv_predictions(lr, d, folds, target, diagnostics) for lr in library]
    losses = np.array([cluster_losses(d, loss, qc, qi, target) for qc, qi in oof])
    cv_risks = losses.mean(axis=1)
    best = int(np.argmin(cv_risks))  # first minimum on ties

    K = len(library)
    weights = np.zeros(K)
    weights[best] = 1.0
    ensemble_risk = float(cv_risks[best])
    if mode == "convex" and K > 1:
        if loss.individual:
            Z = np.column_stack([_clip(qi) if loss.nll else qi for _, qi in oof])
            y = d.outcome if target is Target.OUTCOME else d.exposure_individual()
            unit_w = d.weights
        else:
            Z = np.column_stack([_clip(qc) if loss.nll else qc for qc, _ in oof])
            y = d.cluster_outcomes if target is Target.OUTCOME else d.exposure.astype(float)
            unit_w = np.ones(d.n_clusters)
        w, f = _convex_weights(Z, np.asarray(y, float), unit_w, loss.nll, best, d.n_clusters)
        if f <= ensemble_risk:
            weights, ensemble_risk = w / w.sum(), f

    refits = tuple(fit_learner(lr, d, target) for lr in library)
    return SuperLearnerFit(
        library=library,
        folds=folds,
        loss=loss,
        target=target,
        cv_risks=cv_risks,
        meta_weights=weights,
        ensemble_cv_risk=ensemble_risk,
        refit_learners=refits,
        mode=mode,
        diagnostics=tuple(diagnostics),
    )


@dataclass(frozen=True, eq=False)
class SLPrediction:
    cluster: np.ndarray
    individual: np.ndarray
    by_learner_cluster: np.ndarray
    by_learner_individual: np.ndarray


def sl_predict(fit: SuperLearnerFit, d: HierarchicalDataset, exposure_override: int | None = None) -> SLPrediction:
    """Ensemble predictions at cluster and individual level.

    With ``exposure_override`` set, outcome learners predict as if every
    cluster had received that exposure.
    """
    per = [
        predict_learner(lr, f, d, fit.target, exposure_override)
        for lr, f in zip(fit.library, fit.refit_learners)
    ]
    Qc = np.column_stack([p[0] for p in per])
    Qi = np.column_stack([p[1] for p in per])
    return SLPrediction(
        cluster=Qc @ fit.meta_weights,
        individual=Qi @ fit.meta_weights,
        by_learner_cluster=Qc,
        by_learner_individual=Qi,
    )
