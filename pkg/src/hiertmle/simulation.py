"""Simulation 1: an observational study with a cluster-level exposure.

Each replicate draws ``J`` clusters. Cluster sizes are
``round(Normal(size_mean, size_sd))`` clamped at 1; two individual
covariates are standard normal with correlation ``w_corr``; the exposure
depends on the cluster mean of ``W1``; individual outcomes are
``1{U < p}`` with ``p`` from one of two logistic models:

* minimal interference: ``0.25 + 0.1 A + 0.15 W1c + 1.15 W1 + W2``
* stronger interference: ``0.25 + 0.1 A + 0.15 W1c + 0.25 W1 + W2c``

The uniforms ``U`` are independent, or come from an exchangeable Gaussian
copula within cluster. Counterfactual outcomes reuse the same ``U``.

Two knobs go beyond the basic description. With both at their default
of 0, ``W`` is i.i.d. inside clusters, so the cluster means have variance
``1/N_j`` and barely move the exposure; the covariates then hardly
confound anything. :func:`calibrated` turns both on:

``w_icc``
    Share of the variance of each ``W`` column that is common to the
    cluster. Marginals stay mean 0, variance 1, correlation ``w_corr``.
``error_w_link``
    Correlation between the shared copula factor of a cluster and the
    cluster component of ``W1`` (dependent errors only). This is an
    unmeasured cluster-level common cause of the covariates and the
    outcomes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from . import registry
from .data import HierarchicalDataset
from .errors import ConfigurationError, HierTmleError
from .estimators import TmleOptions

W_NAMES = ("W1", "W2")
TRUTH_STREAM = 1
REPLICATE_STREAM = 0


class Interference(str, Enum):
    MINIMAL = "minimal"
    STRONGER = "stronger"


class ErrorDependence(str, Enum):
    INDEPENDENT = "independent"
    DEPENDENT = "dependent"


def _enum(cls, value, field_name):
    if isinstance(value, cls):
        return value
    try:
        return cls(str(value).lower())
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ConfigurationError(f"{field_name}: {value!r} is not one of {choices}") from None


@dataclass(frozen=True)
class Sim1Config:
    """Data-generating process of one Simulation 1 scenario."""

    J: int = 100
    size_mean: float = 50.0
    size_sd: float = 10.0
    w_corr: float = 0.0
    interference: Interference = Interference.MINIMAL
    error_dependence: ErrorDependence = ErrorDependence.INDEPENDENT
    error_rho: float = 0.5
    null_effect: bool = False
    seed: int = 0
    w_icc: float = 0.0
    error_w_link: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "interference", _enum(Interference, self.interference, "interference"))
        object.__setattr__(
            self, "error_dependence", _enum(ErrorDependence, self.error_dependence, "error_dependence")
        )
        checks = [
            ("J", isinstance(self.J, (int, np.integer)) and self.J >= 2, "an integer >= 2"),
            ("size_mean", self.size_mean > 0, "> 0"),
            ("size_sd", self.size_sd >= 0, ">= 0"),
            ("w_corr", -1 < self.w_corr < 1, "in (-1, 1)"),
            ("error_rho", 0 <= self.error_rho < 1, "in [0, 1)"),
            ("w_icc", 0 <= self.w_icc <= 1, "in [0, 1]"),
            ("error_w_link", -1 <= self.error_w_link <= 1, "in [-1, 1]"),
            ("seed", isinstance(self.seed, (int, np.integer)) and self.seed >= 0, "a nonnegative integer"),
        ]
        for name, ok, what in checks:
            if not ok:
                raise ConfigurationError(f"{name} must be {what}, got {getattr(self, name)!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "Sim1Config":
        if not isinstance(raw, dict):
            raise ConfigurationError("simulation config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigurationError(f"unknown config field(s) {unknown}")
        kwargs = dict(raw)
        try:
            for name in ("J", "seed"):
                if name in kwargs:
                    if float(kwargs[name]) != int(kwargs[name]):
                        raise ValueError
                    kwargs[name] = int(kwargs[name])
            for name in ("size_mean", "size_sd", "w_corr", "error_rho", "w_icc", "error_w_link"):
                if name in kwargs:
                    kwargs[name] = float(kwargs[name])
        except (TypeError, ValueError):
            raise ConfigurationError(f"config field {name!r} has invalid value {raw[name]!r}") from None
        if "null_effect" in kwargs and not isinstance(kwargs["null_effect"], bool):
            raise ConfigurationError(f"config field 'null_effect' must be true/false, got {raw['null_effect']!r}")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["interference"] = self.interference.value
        out["error_dependence"] = self.error_dependence.value
        return out

    def replace(self, **changes) -> "Sim1Config":
        return replace(self, **changes)

    @property
    def label(self) -> str:
        null = ", null" if self.null_effect else ""
        return f"{self.interference.value} interference, {self.error_dependence.value} errors{null}"


def calibrated(**changes) -> Sim1Config:
    """Preset whose confounding strength resembles the published Simulation 1 results.

    Chosen by small pilot runs: with these values the unadjusted estimator
    has roughly 10% bias under minimal interference and the population
    effects are about 1.5% / 2% (minimal / stronger interference,
    independent errors).
    """
    base = dict(w_icc=0.5, w_corr=0.5, error_rho=0.2, error_w_link=-0.9)
    base.update(changes)
    return Sim1Config(**base)


def scenarios(base: Sim1Config | None = None, null_effect: bool = False) -> list[Sim1Config]:
    """The four (interference x error dependence) scenarios around ``base``."""
    base = base or Sim1Config()
    return [
        base.replace(interference=i, error_dependence=e, null_effect=null_effect)
        for e in ErrorDependence
        for i in Interference
    ]


# ---------------------------------------------------------------------------
# Random number generation
# ---------------------------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def copula_uniforms(n: int, rho: float, rng=None, size: int | None = None) -> np.ndarray:
    """Exchangeable Gaussian-copula uniforms.

    Draws ``Z = sqrt(rho) S + sqrt(1 - rho) e`` with a shared standard
    normal ``S`` and i.i.d. standard normal ``e``, and returns ``Phi(Z)``:
    each coordinate is Uniform(0, 1) and every pair has normal-scale
    correlation ``rho``.

    Parameters
    ----------
    n : int
        Length of the exchangeable vector.
    rho : float
        In ``[0, 1)``.
    rng : Generator or seed, optional
    size : int, optional
        Number of independent vectors; the result then has shape ``(size, n)``.
    """
    if not 0 <= rho < 1:
        raise ConfigurationError(f"rho must lie in [0, 1), got {rho}")
    rng = _rng(rng)
    m = 1 if size is None else int(size)
    shared = rng.standard_normal((m, 1))
    z = math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * rng.standard_normal((m, int(n)))
    u = norm.cdf(z)
    return u[0] if size is None else u


def _bivariate_normal(rng, m: int, corr: float) -> np.ndarray:
    z = rng.standard_normal((m, 2))
    z[:, 1] = corr * z[:, 0] + math.sqrt(1.0 - corr**2) * z[:, 1]
    return z


# ---------------------------------------------------------------------------
# Worlds
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimulatedWorld:
    """A simulated dataset together with its counterfactual cluster outcomes.

    ``true_g`` is the cluster propensity ``P(A = 1 | W1c)`` used to draw the
    exposure.
    """

    dataset: HierarchicalDataset
    counterfactual_yc_1: np.ndarray
    counterfactual_yc_0: np.ndarray
    true_g: np.ndarray
    config: Sim1Config

    @property
    def sample_ate(self) -> float:
        return float(np.mean(self.counterfactual_yc_1 - self.counterfactual_yc_0))


def _linear_predictor(cfg: Sim1Config, a, w1, w2, w1c_i, w2c_i):
    if cfg.interference is Interference.MINIMAL:
        return 0.25 + 0.1 * a + 0.15 * w1c_i + 1.15 * w1 + w2
    return 0.25 + 0.1 * a + 0.15 * w1c_i + 0.25 * w1 + w2c_i


def _draw(cfg: Sim1Config, J: int, rng: np.random.Generator):
    """Raw arrays of one world: sizes, W, A, counterfactual Y, true g."""
    sizes = np.maximum(1, np.rint(rng.normal(cfg.size_mean, cfg.size_sd, J))).astype(np.int64)
    n = int(sizes.sum())
    cl = np.repeat(np.arange(J), sizes)

    common = _bivariate_normal(rng, J, cfg.w_corr)
    own = _bivariate_normal(rng, n, cfg.w_corr)
    W = math.sqrt(cfg.w_icc) * common[cl] + math.sqrt(1.0 - cfg.w_icc) * own
    Wc = np.column_stack([np.bincount(cl, weights=W[:, k], minlength=J) for k in range(2)]) / sizes[:, None]

    g = expit(0.75 * Wc[:, 0])
    A = (rng.random(J) < g).astype(np.int64)

    if cfg.error_dependence is ErrorDependence.INDEPENDENT:
        U = rng.random(n)
    else:
        lam = cfg.error_w_link
        shared = lam * common[:, 0] + math.sqrt(1.0 - lam**2) * rng.standard_normal(J)
        z = math.sqrt(cfg.error_rho) * shared[cl] + math.sqrt(1.0 - cfg.error_rho) * rng.standard_normal(n)
        U = norm.cdf(z)

    w1c_i, w2c_i = Wc[cl, 0], Wc[cl, 1]
    p1 = expit(_linear_predictor(cfg, 1.0, W[:, 0], W[:, 1], w1c_i, w2c_i))
    p0 = expit(_linear_predictor(cfg, 0.0, W[:, 0], W[:, 1], w1c_i, w2c_i))
    y0 = (U < p0).astype(float)
    y1 = y0 if cfg.null_effect else (U < p1).astype(float)
    return sizes, cl, W, A, y1, y0, g


def simulate_world(cfg: Sim1Config, rng=None) -> SimulatedWorld:
    """Draw one dataset of ``cfg.J`` clusters with its counterfactuals.

    Without ``rng`` the stream is seeded from ``cfg.seed``; the same config
    therefore always gives a bit-identical world.
    """
    rng = _rng(np.random.SeedSequence(cfg.seed) if rng is None else rng)
    J = cfg.J
    sizes, cl, W, A, y1, y0, g = _draw(cfg, J, rng)
    y_obs = np.where(A[cl] == 1, y1, y0)
    yc1 = np.bincount(cl, weights=y1, minlength=J) / sizes
    yc0 = yc1 if cfg.null_effect else np.bincount(cl, weights=y0, minlength=J) / sizes
    width = len(str(J))
    d = HierarchicalDataset(
        ids=[f"c{j:0{width}d}" for j in range(J)],
        exposure=A,
        sizes=sizes,
        outcome=y_obs,
        cov=W,
        env=np.empty((J, 0)),
        cov_names=W_NAMES,
    )
    return SimulatedWorld(d, yc1, yc0.copy(), g, cfg)


@dataclass(frozen=True)
class Truth:
    """Monte-Carlo population effect with its standard error."""

    value: float
    se: float
    population_size: int

    def __float__(self) -> float:
        return self.value


def true_ate(cfg: Sim1Config, population_size: int = 10_000, seed: int | None = None, chunk: int = 2_000) -> Truth:
    """Mean of ``Y^c(1) - Y^c(0)`` over a fresh population of clusters.

    The population is drawn from its own stream (``seed``, default
    ``cfg.seed``), disjoint from the replicate streams.
    """
    if population_size < 2:
        raise ConfigurationError("population_size must be at least 2")
    if cfg.null_effect:
        return Truth(0.0, 0.0, population_size)
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, TRUTH_STREAM, 0]))
    diffs = []
    remaining = population_size
    while remaining > 0:
        m = min(chunk, remaining)
        sizes, cl, _, _, y1, y0, _ = _draw(cfg, m, rng)
        diffs.append(np.bincount(cl, weights=y1 - y0, minlength=m) / sizes)
        remaining -= m
    diffs = np.concatenate(diffs)
    return Truth(float(np.mean(diffs)), float(np.std(diffs, ddof=1) / math.sqrt(diffs.size)), population_size)


# ---------------------------------------------------------------------------
# Replication
# ---------------------------------------------------------------------------


def replicate_seed(cfg: Sim1Config, r: int) -> np.random.SeedSequence:
    """Seed of replicate ``r``: a SeedSequence hash of ``(cfg.seed, 0, r)``."""
    return np.random.SeedSequence([cfg.seed, REPLICATE_STREAM, r])


def _one_replicate(args):
    cfg, r, names, options = args
    world = simulate_world(cfg, np.random.default_rng(replicate_seed(cfg, r)))
    out = []
    for name in names:
        try:
            res = registry.run(name, world.dataset, world.true_g, options)
            out.append((res.ate, res.ci_low, res.ci_high, res.p_value, ""))
        except HierTmleError as exc:
            out.append((math.nan, math.nan, math.nan, math.nan, f"{type(exc).__name__}: {exc}"))
    return out


@dataclass(frozen=True)
class EstimatorSummary:
    """Performance of one estimator over the replicates, in percent."""

    estimator: str
    bias: float
    sigma: float
    rmse: float
    power_or_type1: float
    coverage: float
    bias_mc_se: float
    n_ok: int
    n_failed: int


@dataclass(frozen=True, eq=False)
class ReplicationReport:
    config: Sim1Config
    n_reps: int
    truth_used: float
    rows: tuple[EstimatorSummary, ...]
    failures: tuple[tuple[int, str, str], ...] = ()
    traces: dict | None = field(default=None)

    @property
    def rejection_label(self) -> str:
        return "type_I" if self.config.null_effect else "power"

    def row(self, estimator: str) -> EstimatorSummary:
        for r in self.rows:
            if r.estimator == estimator:
                return r
        raise KeyError(estimator)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "bias", "sigma", "rmse", self.rejection_label, "coverage", "bias_mc_se", "n_ok", "n_failed"])
        for r in self.rows:
            w.writerow(
                [r.estimator]
                + [repr(float(x)) for x in (r.bias, r.sigma, r.rmse, r.power_or_type1, r.coverage, r.bias_mc_se)]
                + [r.n_ok, r.n_failed]
            )
        return buf.getvalue()

    def to_dict(self) -> dict:
        rows = []
        for r in self.rows:
            d = asdict(r)
            d[self.rejection_label] = d.pop("power_or_type1")
            rows.append(d)
        out = {
            "config": self.config.to_dict(),
            "n_reps": self.n_reps,
            "truth_used": self.truth_used,
            "estimators": rows,
            "failures": [{"replicate": r, "estimator": e, "error": m} for r, e, m in self.failures],
        }
        if self.traces is not None:
            out["traces"] = self.traces
        return out

    def to_json(self) -> str:
        return json.dumps(finite_json(self.to_dict()), indent=2, sort_keys=True)

    def table(self) -> str:
        """Fixed-width text table, one row per estimator, one decimal."""
        head = f"{'estimator':<18}{'bias':>7}{'sigma':>7}{'rmse':>7}{self.rejection_label:>8}{'cover':>7}{'fail':>6}"
        lines = [head]
        for r in self.rows:
            lines.append(
                f"{r.estimator:<18}{r.bias:>7.1f}{r.sigma:>7.1f}{r.rmse:>7.1f}{r.power_or_type1:>8.0f}{r.coverage:>7.0f}{r.n_failed:>6d}"
            )
        return "\n".join(lines)


def finite_json(obj):
    """Replace non-finite floats by None, recursively, for JSON output."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: finite_json(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [finite_json(v) for v in obj]
    return obj


def summarise(name: str, estimates, ci_low, ci_high, p_values, truth: float) -> EstimatorSummary:
    est = np.asarray(estimates, dtype=float)
    ok = np.isfinite(est)
    e, lo, hi, p = est[ok], np.asarray(ci_low)[ok], np.asarray(ci_high)[ok], np.asarray(p_values)[ok]
    m = e.size
    if m == 0:
        nan = math.nan
        return EstimatorSummary(name, nan, nan, nan, nan, nan, nan, 0, int(est.size))
    err = e - truth
    bias = float(np.mean(err))
    sigma = float(np.std(e))  # ddof=0 so that rmse^2 = bias^2 + sigma^2
    rmse = float(math.sqrt(np.mean(err**2)))
    mc_se = float(np.std(e, ddof=1) / math.sqrt(m)) if m > 1 else math.nan
    return EstimatorSummary(
        estimator=name,
        bias=100 * bias,
        sigma=100 * sigma,
        rmse=100 * rmse,
        power_or_type1=100 * float(np.mean(p < 0.05)),
        coverage=100 * float(np.mean((lo <= truth) & (truth <= hi))),
        bias_mc_se=100 * mc_se,
        n_ok=int(m),
        n_failed=int(est.size - m),
    )


def replicate(
    cfg: Sim1Config,
    n_reps: int,
    estimators: Sequence[str] = registry.SIM1_ESTIMATORS,
    truth: float | Truth | None = None,
    threads: int = 1,
    options: TmleOptions | None = None,
    keep_traces: bool = False,
) -> ReplicationReport:
    """Run ``n_reps`` independent replicates and summarise each estimator.

    Replicate ``r`` is seeded by :func:`replicate_seed`, so the report does
    not depend on ``threads``: workers only change where replicates run,
    and results are aggregated in replicate order.

    Parameters
    ----------
    cfg : Sim1Config
    n_reps : int
    estimators : sequence of registry names
    truth : float or Truth, optional
        Defaults to :func:`true_ate` on 10,000 clusters.
    threads : int
        Worker processes; 1 runs inline.
    keep_traces : bool
        Keep per-replicate estimates and intervals in the report.
    """
    if n_reps < 1:
        raise ConfigurationError("n_reps must be at least 1")
    names = registry.resolve(estimators)
    truth_value = float(true_ate(cfg) if truth is None else truth)
    options = options or TmleOptions()
    jobs = [(cfg, r, names, options) for r in range(n_reps)]
    if threads > 1 and n_reps > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_one_replicate, jobs, chunksize=max(1, n_reps // (4 * threads))))
    else:
        results = [_one_replicate(j) for j in jobs]

    arr = np.array([[row[:4] for row in rep] for rep in results], dtype=float)  # (reps, estimators, 4)
    rows, failures = [], []
    for k, name in enumerate(names):
        rows.append(summarise(name, arr[:, k, 0], arr[:, k, 1], arr[:, k, 2], arr[:, k, 3], truth_value))
        failures.extend((r, name, rep[k][4]) for r, rep in enumerate(results) if rep[k][4])
    traces = None
    if keep_traces:
        traces = {
            name: {
                "estimate": arr[:, k, 0].tolist(),
                "ci_low": arr[:, k, 1].tolist(),
                "ci_high": arr[:, k, 2].tolist(),
                "p_value": arr[:, k, 3].tolist(),
            }
            for k, name in enumerate(names)
        }
    return ReplicationReport(cfg, n_reps, truth_value, tuple(rows), tuple(failures), traces)
