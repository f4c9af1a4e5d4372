"""Hierarchical data containers, cluster aggregation and CSV ingestion.

A dataset holds ``J`` independent clusters. Each cluster carries a vector of
environmental covariates ``E``, a binary exposure ``A`` and a set of members,
each with individual covariates ``W``, an outcome ``Y`` in [0, 1] and a weight
``alpha``. Individuals are stored contiguously, cluster by cluster, in flat
numpy arrays so that estimators can work on the pooled data without copying;
the record-style :class:`Cluster` / :class:`IndividualRecord` views are built
on demand.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, DomainError, SchemaError

CLUSTER_ID = "cluster_id"
EXPOSURE = "A"
OUTCOME = "Y"
AGGREGATE_SUFFIX = "_c"

_ROLES = {"cluster_id", "A", "Y", "E", "W"}


class WeightScheme(str, Enum):
    """How the individual weights ``alpha_ij`` are assigned."""

    PER_CLUSTER = "per_cluster"  # alpha_ij = 1 / N_j
    POOLED = "pooled"  # alpha_ij = J / sum_j N_j

    @classmethod
    def parse(cls, value: "WeightScheme | str") -> "WeightScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", "_"))
        except ValueError:
            raise SchemaError(f"unknown weight scheme {value!r}") from None


def aggregate_name(column: str) -> str:
    """Name under which the cluster mean of individual column ``column`` is exposed."""
    return column + AGGREGATE_SUFFIX


@dataclass(frozen=True)
class IndividualRecord:
    cluster_id: str
    covariates: Mapping[str, float]
    outcome: float
    weight: float


@dataclass(frozen=True)
class Cluster:
    id: str
    env_covariates: Mapping[str, float]
    exposure: int
    members: tuple[IndividualRecord, ...]

    @property
    def size(self) -> int:
        return len(self.members)


def cluster_outcome(c: Cluster) -> float:
    """Weighted mean outcome ``Y^c = sum_i alpha_i Y_i`` of one cluster."""
    return math.fsum(m.weight * m.outcome for m in c.members)


def compute_weights(sizes: np.ndarray, scheme: WeightScheme | str) -> np.ndarray:
    """Per-individual weights for clusters of the given sizes."""
    scheme = WeightScheme.parse(scheme)
    sizes = np.asarray(sizes, dtype=np.int64)
    if scheme is WeightScheme.PER_CLUSTER:
        return np.repeat(1.0 / sizes, sizes)
    return np.full(int(sizes.sum()), len(sizes) / sizes.sum())


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HierarchicalDataset:
    """``J`` clusters of individuals with a cluster-level exposure.

    Parameters
    ----------
    ids : sequence of str
        Cluster identifiers, one per cluster, unique.
    exposure : array of shape (J,)
        Binary cluster exposure ``A``.
    sizes : array of shape (J,)
        Number of members ``N_j`` of each cluster.
    outcome : array of shape (n,)
        Individual outcomes in [0, 1], grouped contiguously by cluster.
    cov : array of shape (n, p_W)
        Individual covariates ``W``.
    env : array of shape (J, p_E)
        Environmental covariates ``E``.
    cov_names, env_names : sequence of str
        Column names for ``cov`` and ``env``.
    weight_scheme : WeightScheme
        Scheme used to derive ``weights``.
    """

    ids: tuple[str, ...]
    exposure: np.ndarray
    sizes: np.ndarray
    outcome: np.ndarray
    cov: np.ndarray
    env: np.ndarray
    cov_names: tuple[str, ...] = ()
    env_names: tuple[str, ...] = ()
    weight_scheme: WeightScheme = WeightScheme.PER_CLUSTER
    weights: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        set_ = object.__setattr__
        set_(self, "ids", tuple(str(i) for i in self.ids))
        set_(self, "cov_names", tuple(self.cov_names))
        set_(self, "env_names", tuple(self.env_names))
        set_(self, "weight_scheme", WeightScheme.parse(self.weight_scheme))

        J = len(self.ids)
        if J < 2:
            raise DataError(f"need at least 2 clusters, got {J}")
        if len(set(self.ids)) != J:
            raise DataError("cluster ids must be unique")

        sizes = np.asarray(self.sizes, dtype=np.int64).reshape(-1)
        if sizes.shape != (J,):
            raise DataError("sizes must have one entry per cluster")
        if np.any(sizes < 1):
            bad = self.ids[int(np.argmin(sizes))]
            raise DomainError(f"cluster {bad!r} has no members")
        n = int(sizes.sum())

        exposure = np.asarray(self.exposure).reshape(-1)
        if exposure.shape != (J,):
            raise DataError("exposure must have one entry per cluster")
        if not np.all((exposure == 0) | (exposure == 1)):
            raise DomainError("exposure must be binary (0/1)")
        exposure = exposure.astype(np.int64)

        outcome = np.asarray(self.outcome, dtype=float).reshape(-1)
        if outcome.shape != (n,):
            raise DataError(f"outcome has length {outcome.size}, expected {n}")
        if not np.all(np.isfinite(outcome)) or np.any((outcome < 0) | (outcome > 1)):
            raise DomainError("outcomes must lie in [0, 1]")

        cov = np.asarray(self.cov, dtype=float).reshape(n, len(self.cov_names))
        env = np.asarray(self.env, dtype=float).reshape(J, len(self.env_names))
        names = self.cov_names + self.env_names
        if len(set(names)) != len(names):
            raise SchemaError("covariate names must be unique across E and W")
        if not (np.all(np.isfinite(cov)) and np.all(np.isfinite(env))):
            raise DomainError("covariates must be finite")

        weights = compute_weights(sizes, self.weight_scheme)

        set_(self, "sizes", _frozen(sizes))
        set_(self, "exposure", _frozen(exposure))
        set_(self, "outcome", _frozen(outcome))
        set_(self, "cov", _frozen(np.ascontiguousarray(cov)))
        set_(self, "env", _frozen(np.ascontiguousarray(env)))
        set_(self, "weights", _frozen(weights))

    # -- shape -----------------------------------------------------------
    @property
    def n_clusters(self) -> int:
        return len(self.ids)

    @property
    def n_individuals(self) -> int:
        return int(self.outcome.shape[0])

    @cached_property
    def cluster_of(self) -> np.ndarray:
        """Cluster position (0..J-1) of every individual."""
        return _frozen(np.repeat(np.arange(self.n_clusters), self.sizes))

    @cached_property
    def offsets(self) -> np.ndarray:
        return _frozen(np.concatenate([[0], np.cumsum(self.sizes)]))

    # -- aggregation -----------------------------------------------------
    def cluster_sum(self, values: np.ndarray) -> np.ndarray:
        """Sum an individual-level vector (or matrix columns) within clusters."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            return np.bincount(self.cluster_of, weights=values, minlength=self.n_clusters)
        return np.column_stack([self.cluster_sum(values[:, k]) for k in range(values.shape[1])])

    def weighted_cluster_mean(self, values: np.ndarray) -> np.ndarray:
        """``sum_i alpha_ij v_ij`` per cluster."""
        values = np.asarray(values, dtype=float)
        w = self.weights if values.ndim == 1 else self.weights[:, None]
        return self.cluster_sum(values * w)

    @cached_property
    def cluster_outcomes(self) -> np.ndarray:
        """Observed cluster outcomes ``Y^c_j``."""
        yc = self.weighted_cluster_mean(self.outcome)
        if self.weight_scheme is WeightScheme.PER_CLUSTER:
            # Weights sum to one only up to rounding; keep Y^c inside [0, 1].
            yc = np.clip(yc, 0.0, 1.0)
        return _frozen(yc)

    def broadcast(self, cluster_values: np.ndarray) -> np.ndarray:
        """Repeat per-cluster values for each member."""
        return np.asarray(cluster_values)[self.cluster_of]

    def exposure_individual(self) -> np.ndarray:
        return self.broadcast(self.exposure).astype(float)

    # -- record views ----------------------------------------------------
    @cached_property
    def clusters(self) -> tuple[Cluster, ...]:
        out = []
        for j, cid in enumerate(self.ids):
            lo, hi = self.offsets[j], self.offsets[j + 1]
            members = tuple(
                IndividualRecord(
                    cluster_id=cid,
                    covariates=dict(zip(self.cov_names, map(float, self.cov[i]))),
                    outcome=float(self.outcome[i]),
                    weight=float(self.weights[i]),
                )
                for i in range(lo, hi)
            )
            out.append(
                Cluster(
                    id=cid,
                    env_covariates=dict(zip(self.env_names, map(float, self.env[j]))),
                    exposure=int(self.exposure[j]),
                    members=members,
                )
            )
        return tuple(out)

    def subset(self, positions: Sequence[int] | np.ndarray) -> "HierarchicalDataset":
        """Dataset restricted to the clusters at ``positions`` (in that order).

        Weights are recomputed under the same scheme for the subset.
        """
        positions = np.asarray(positions, dtype=np.int64)
        rows = np.concatenate([np.arange(self.offsets[j], self.offsets[j + 1]) for j in positions])
        return HierarchicalDataset(
            ids=[self.ids[j] for j in positions],
            exposure=self.exposure[positions],
            sizes=self.sizes[positions],
            outcome=self.outcome[rows],
            cov=self.cov[rows],
            env=self.env[positions],
            cov_names=self.cov_names,
            env_names=self.env_names,
            weight_scheme=self.weight_scheme,
        )

    def with_weight_scheme(self, scheme: WeightScheme | str) -> "HierarchicalDataset":
        return HierarchicalDataset(
            ids=self.ids,
            exposure=self.exposure,
            sizes=self.sizes,
            outcome=self.outcome,
            cov=self.cov,
            env=self.env,
            cov_names=self.cov_names,
            env_names=self.env_names,
            weight_scheme=scheme,
        )


def aggregate_covariates(d: HierarchicalDataset, which: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    """Unweighted cluster means ``W^c_j = (1/N_j) sum_i W_ij`` of individual columns.

    Returns a dict keyed by the requested column names.
    """
    which = list(d.cov_names if which is None else which)
    out = {}
    for name in which:
        if name not in d.cov_names:
            raise SchemaError(f"unknown individual-level column {name!r}")
        k = d.cov_names.index(name)
        out[name] = d.cluster_sum(d.cov[:, k]) / d.sizes
    return out


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def read_schema(path: str | Path) -> dict[str, str]:
    """Read a column-role mapping.

    JSON (``.json``) and YAML (``.yaml``/``.yml``) files hold a flat mapping;
    anything else is read as ``column = role`` lines, ``#`` starting a comment.
    Roles are ``cluster_id``, ``A``, ``Y``, ``E`` or ``W``.
    """
    path = Path(path)
    text = path.read_text()
    suffix = path.suffix.lower()
    if suffix == ".json":
        mapping = json.loads(text)
    elif suffix in (".yaml", ".yml"):
        import yaml

        mapping = yaml.safe_load(text)
    else:
        mapping = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchemaError(f"{path}:{lineno}: expected 'column = role'")
            key, value = (s.strip() for s in line.split("=", 1))
            mapping[key] = value
    if not isinstance(mapping, dict):
        raise SchemaError(f"{path}: schema must be a mapping of column to role")
    return {str(k): str(v) for k, v in mapping.items()}


def write_schema(d: HierarchicalDataset, path: str | Path) -> None:
    lines = [f"{CLUSTER_ID} = cluster_id", f"{EXPOSURE} = A", f"{OUTCOME} = Y"]
    lines += [f"{name} = E" for name in d.env_names]
    lines += [f"{name} = W" for name in d.cov_names]
    Path(path).write_text("\n".join(lines) + "\n")


def _resolve_roles(header: list[str], schema: Mapping[str, str]) -> dict[str, list[str]]:
    roles: dict[str, list[str]] = {r: [] for r in _ROLES}
    for col in header:
        role = schema.get(col)
        if role is None and col in (CLUSTER_ID, EXPOSURE, OUTCOME):
            role = col
        if role is None:
            raise SchemaError(f"column {col!r} has no role in the schema")
        if role not in _ROLES:
            raise SchemaError(f"column {col!r}: unknown role {role!r}")
        roles[role].append(col)
    for col in schema:
        if col not in header:
            raise SchemaError(f"schema names column {col!r} absent from the file")
    for role in ("cluster_id", "A", "Y"):
        if len(roles[role]) != 1:
            raise SchemaError(f"schema must name exactly one {role} column, got {roles[role]}")
    return roles


def _parse_float(text: str, col: str, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {lineno}: column {col!r}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise DataError(f"line {lineno}: column {col!r}: missing or non-finite value")
    return value


def load_csv(
    path: str | Path,
    schema: Mapping[str, str] | str | Path | None = None,
    weight_scheme: WeightScheme | str = WeightScheme.PER_CLUSTER,
) -> HierarchicalDataset:
    """Load a long-format CSV with one row per individual.

    Cluster order follows first appearance in the file; member order within a
    cluster follows file order. ``E`` columns and the exposure must be constant
    within each cluster.
    """
    if schema is None:
        schema = {}
    elif not isinstance(schema, Mapping):
        schema = read_schema(schema)

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        roles = _resolve_roles(header, schema)
        pos = {c: k for k, c in enumerate(header)}
        id_col, a_col, y_col = roles["cluster_id"][0], roles["A"][0], roles["Y"][0]
        e_cols, w_cols = roles["E"], roles["W"]

        groups: dict[str, dict] = {}
        for lineno, row in enumerate(reader, 2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            cid = row[pos[id_col]].strip()
            if not cid:
                raise DataError(f"line {lineno}: missing cluster id")
            a = _parse_float(row[pos[a_col]], a_col, lineno)
            if a not in (0.0, 1.0):
                raise DomainError(f"line {lineno}: exposure must be 0 or 1, got {a}")
            y = _parse_float(row[pos[y_col]], y_col, lineno)
            if not 0.0 <= y <= 1.0:
                raise DomainError(f"line {lineno}: outcome {y} outside [0, 1]")
            e = [_parse_float(row[pos[c]], c, lineno) for c in e_cols]
            w = [_parse_float(row[pos[c]], c, lineno) for c in w_cols]
            g = groups.get(cid)
            if g is None:
                groups[cid] = {"A": a, "E": e, "Y": [y], "W": [w]}
                continue
            if g["A"] != a:
                raise SchemaError(f"exposure column {a_col!r} is not constant within cluster {cid!r}")
            for c, old, new in zip(e_cols, g["E"], e):
                if old != new:
                    raise SchemaError(f"E column {c!r} is not constant within cluster {cid!r}")
            g["Y"].append(y)
            g["W"].append(w)

    ids = list(groups)
    if not ids:
        raise DomainError(f"{path}: no data rows")
    return HierarchicalDataset(
        ids=ids,
        exposure=np.array([groups[c]["A"] for c in ids]),
        sizes=np.array([len(groups[c]["Y"]) for c in ids]),
        outcome=np.array([y for c in ids for y in groups[c]["Y"]]),
        cov=np.array([w for c in ids for w in groups[c]["W"]], dtype=float).reshape(
            sum(len(groups[c]["Y"]) for c in ids), len(w_cols)
        ),
        env=np.array([groups[c]["E"] for c in ids], dtype=float).reshape(len(ids), len(e_cols)),
        cov_names=w_cols,
        env_names=e_cols,
        weight_scheme=weight_scheme,
    )


def write_csv(d: HierarchicalDataset, path: str | Path, schema_path: str | Path | None = None) -> None:
    """Write ``d`` in the long format read by :func:`load_csv`.

    Reals are written with ``repr`` so that reading the file back reproduces
    every value bit for bit.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([CLUSTER_ID, EXPOSURE, OUTCOME, *d.env_names, *d.cov_names])
        for j, cid in enumerate(d.ids):
            e = [repr(float(v)) for v in d.env[j]]
            a = int(d.exposure[j])
            for i in range(d.offsets[j], d.offsets[j + 1]):
                writer.writerow([cid, a, repr(float(d.outcome[i])), *e, *(repr(float(v)) for v in d.cov[i])])
    if schema_path is not None:
        write_schema(d, schema_path)
