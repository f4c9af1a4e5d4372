import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiertmle import (
    Cluster,
    HierarchicalDataset,
    IndividualRecord,
    WeightScheme,
    aggregate_covariates,
    cluster_outcome,
    load_csv,
    write_csv,
)
from hiertmle.data import read_schema
from hiertmle.errors import DataError, DomainError, SchemaError

from _factories import random_dataset, toy_dataset


def _write(path, rows, header="cluster_id,A,Y,E1,W1"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


SCHEMA = {"cluster_id": "cluster_id", "A": "A", "Y": "Y", "E1": "E", "W1": "W"}


def test_load_csv_six_rows(tmp_path):
    p = _write(
        tmp_path / "d.csv",
        ["a,1,1,0.5,1", "a,1,0,0.5,2", "b,0,1,1,0", "b,0,1,1,1", "b,0,0,1,2", "c,1,0,2,3"],
    )
    d = load_csv(p, SCHEMA)
    assert d.n_clusters == 3
    assert d.ids == ("a", "b", "c")
    np.testing.assert_array_equal(d.sizes, [2, 3, 1])
    np.testing.assert_allclose(d.weights, [1 / 2, 1 / 2, 1 / 3, 1 / 3, 1 / 3, 1.0])
    np.testing.assert_allclose(d.cluster_outcomes, [0.5, 2 / 3, 0.0])
    np.testing.assert_array_equal(d.exposure, [1, 0, 1])
    np.testing.assert_array_equal(d.env[:, 0], [0.5, 1.0, 2.0])


def test_pooled_weights_sum_to_J(tmp_path):
    p = _write(tmp_path / "d.csv", ["a,1,1,0,1", "a,1,0,0,2", "b,0,1,1,0", "b,0,1,1,1", "b,0,0,1,2"])
    d = load_csv(p, SCHEMA, weight_scheme="pooled")
    np.testing.assert_allclose(d.weights, 2 / 5)
    assert d.weights.sum() == pytest.approx(d.n_clusters)


@pytest.mark.parametrize(
    "rows, error, needle",
    [
        (["a,1,1,0,1", "a,0,0,0,2", "b,0,1,1,0"], SchemaError, "'A'"),
        (["a,1,1,0,1", "a,1,0,9,2", "b,0,1,1,0"], SchemaError, "'E1'"),
        (["a,1,1.5,0,1", "b,0,1,1,0"], DomainError, "outside"),
        (["a,1,1,0,", "b,0,1,1,0"], DataError, "W1"),
        (["a,2,1,0,1", "b,0,1,1,0"], DomainError, "exposure"),
        (["a,1,1,0,1"], DataError, "2 clusters"),
    ],
)
def test_load_csv_errors(tmp_path, rows, error, needle):
    p = _write(tmp_path / "d.csv", rows)
    with pytest.raises(error, match=needle):
        load_csv(p, SCHEMA)


def test_schema_violation_names_cluster(tmp_path):
    p = _write(tmp_path / "d.csv", ["a,1,1,0,1", "a,0,0,0,2", "b,0,1,1,0"])
    with pytest.raises(SchemaError, match="'a'"):
        load_csv(p, SCHEMA)


def test_schema_errors(tmp_path):
    p = _write(tmp_path / "d.csv", ["a,1,1,0,1", "b,0,1,1,0"])
    with pytest.raises(SchemaError, match="no role"):
        load_csv(p, {"E1": "E"})
    with pytest.raises(SchemaError, match="unknown role"):
        load_csv(p, {**SCHEMA, "W1": "Z"})
    with pytest.raises(SchemaError, match="absent"):
        load_csv(p, {**SCHEMA, "W9": "W"})


def test_empty_cluster_rejected():
    with pytest.raises(DomainError):
        HierarchicalDataset(["a", "b"], [1, 0], [2, 0], [1, 0], np.empty((2, 0)), np.empty((2, 0)))


@pytest.mark.parametrize("suffix", [".txt", ".json", ".yaml"])
def test_schema_formats(tmp_path, suffix):
    path = tmp_path / f"schema{suffix}"
    if suffix == ".json":
        path.write_text(json.dumps(SCHEMA))
    elif suffix == ".yaml":
        path.write_text("\n".join(f"{k}: {v}" for k, v in SCHEMA.items()))
    else:
        path.write_text("# roles\n" + "\n".join(f"{k} = {v}" for k, v in SCHEMA.items()))
    assert read_schema(path) == SCHEMA


def _cluster(ys, alphas):
    members = tuple(IndividualRecord("c", {}, y, a) for y, a in zip(ys, alphas))
    return Cluster("c", {}, 1, members)


@pytest.mark.parametrize(
    "ys, alphas, expected",
    [
        ((0, 1, 1), (1 / 3, 1 / 3, 1 / 3), 2 / 3),
        ((0, 0, 0), (1 / 3, 1 / 3, 1 / 3), 0.0),
        ((0.2, 0.8), (0.25, 0.75), 0.65),
    ],
)
def test_cluster_outcome(ys, alphas, expected):
    assert cluster_outcome(_cluster(ys, alphas)) == pytest.approx(expected, abs=1e-15)


def test_cluster_outcome_agrees_with_dataset():
    d = random_dataset(3, binary=False)
    via_records = [cluster_outcome(c) for c in d.clusters]
    np.testing.assert_allclose(via_records, d.cluster_outcomes, atol=1e-14)


@given(
    st.lists(st.floats(0, 1), min_size=1, max_size=6),
    st.lists(st.floats(0, 1), min_size=1, max_size=6),
    st.floats(0, 1),
)
def test_cluster_outcome_is_linear(y1, y2, t):
    m = min(len(y1), len(y2))
    y1, y2 = np.array(y1[:m]), np.array(y2[:m])
    alpha = np.full(m, 1.0 / m)
    mixed = cluster_outcome(_cluster(t * y1 + (1 - t) * y2, alpha))
    split = t * cluster_outcome(_cluster(y1, alpha)) + (1 - t) * cluster_outcome(_cluster(y2, alpha))
    assert mixed == pytest.approx(split, abs=1e-12)


def test_aggregate_covariates():
    d = HierarchicalDataset(
        ["a", "b"], [1, 0], [2, 1], [1, 0, 1], [[1.0, 7.0], [3.0, 7.0], [5.0, 7.0]], np.empty((2, 0)),
        cov_names=["W1", "C"],
    )
    agg = aggregate_covariates(d)
    np.testing.assert_allclose(agg["W1"], [2.0, 5.0])
    np.testing.assert_allclose(agg["C"], [7.0, 7.0])
    with pytest.raises(SchemaError):
        aggregate_covariates(d, ["nope"])


def test_aggregate_matches_loop():
    d = random_dataset(5)
    agg = aggregate_covariates(d, ["W2"])["W2"]
    k = d.cov_names.index("W2")
    loop = [np.mean(d.cov[d.offsets[j] : d.offsets[j + 1], k]) for j in range(d.n_clusters)]
    np.testing.assert_allclose(agg, loop, rtol=1e-13)


def test_weights_per_cluster_sum_to_one():
    d = random_dataset(8)
    np.testing.assert_allclose(d.cluster_sum(d.weights), 1.0, rtol=1e-14)


def test_cluster_outcomes_stay_in_unit_interval():
    # 1/N summed N times can exceed 1 by an ulp; Y^c must not.
    sizes = np.array([3, 7, 11, 49, 51, 93])
    d = HierarchicalDataset(
        [str(j) for j in range(6)], [1, 0, 1, 0, 1, 0], sizes, np.ones(sizes.sum()),
        np.empty((sizes.sum(), 0)), np.empty((6, 0)),
    )
    assert np.all(d.cluster_outcomes <= 1.0)


def test_arrays_are_read_only_copies():
    y = np.array([1.0, 0.0, 1.0])
    d = HierarchicalDataset(["a", "b"], [1, 0], [2, 1], y, np.empty((3, 0)), np.empty((2, 0)))
    y[0] = 0.0
    assert d.outcome[0] == 1.0
    with pytest.raises(ValueError):
        d.outcome[0] = 0.5


def test_subset_and_weight_scheme():
    d = toy_dataset()
    s = d.subset([1, 0])
    assert s.ids == ("b", "a")
    np.testing.assert_array_equal(s.outcome, [0, 0, 1, 1, 0, 1])
    np.testing.assert_array_equal(s.exposure, [0, 1])
    assert d.with_weight_scheme("pooled").weight_scheme is WeightScheme.POOLED


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.booleans(), st.sampled_from(["per_cluster", "pooled"]))
def test_csv_round_trip_is_exact(tmp_path_factory, seed, binary, scheme):
    d = random_dataset(seed, J=6, binary=binary, weight_scheme=scheme)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    schema = path.with_suffix(".schema")
    write_csv(d, path, schema)
    back = load_csv(path, schema, weight_scheme=scheme)
    assert back.ids == d.ids
    for name in ("exposure", "sizes", "outcome", "cov", "env", "weights"):
        assert np.array_equal(getattr(back, name), getattr(d, name)), name
    assert back.cov_names == d.cov_names and back.env_names == d.env_names
