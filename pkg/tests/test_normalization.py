"""Normalization semantics, aggregation, and the aggregate CSV dialect."""

import warnings
from pathlib import Path

import numpy as np
import pytest

from taskfactor.data_model import LabeledMatrix, PerformanceTable
from taskfactor.errors import DataFormatError, NumericError
from taskfactor.normalization import (
    aggregate_models,
    normalize_table,
    read_aggregate_csv,
    write_aggregate_csv,
    zero_shot_means,
)


def table_from(
    values, zero_shot, model_id="m1", sources=None, targets=None
) -> PerformanceTable:
    values = np.asarray(values, dtype=float)
    zero_shot = np.asarray(zero_shot, dtype=float)
    n, k = values.shape
    sources = tuple(sources or (f"s{i}" for i in range(n)))
    targets = tuple(targets or (f"t{j}" for j in range(k)))
    return PerformanceTable(
        model_id=model_id,
        source_ids=sources,
        target_ids=targets,
        values=values,
        missing=np.isnan(values),
        zero_shot=zero_shot,
        zero_shot_missing=np.isnan(zero_shot),
    )


def test_normalize_worked_example() -> None:
    # scores 30 and 60 against a zero-shot of 20: (30-20)/(60-20) = 0.25
    table = table_from([[30.0], [60.0]], [20.0])
    out = normalize_table(table)
    assert out.values[:, 0].tolist() == [0.25, 1.0]
    assert not out.missing.any()


def test_best_source_row_scores_exactly_one() -> None:
    rng = np.random.default_rng(42)
    table = table_from(rng.uniform(10, 90, (7, 5)), rng.uniform(0, 9, 5))
    out = normalize_table(table)
    for j in range(5):
        col = out.values[:, j]
        best = np.argmax(table.values[:, j])
        assert col[best] == 1.0
        assert np.max(col) == 1.0


def test_zero_shot_not_counted_as_best_source() -> None:
    # zero-shot beats every source; denominator goes negative but the best
    # source row still normalizes to exactly 1
    table = table_from([[10.0], [15.0]], [20.0])
    out = normalize_table(table)
    assert out.values[1, 0] == 1.0
    assert out.values[0, 0] == pytest.approx(2.0)


def test_normalize_affine_invariance_per_column() -> None:
    rng = np.random.default_rng(3)
    base = rng.uniform(20, 80, (6, 4))
    zs = rng.uniform(0, 10, 4)
    scale = np.array([2.0, 0.5, 10.0, 1.0])
    shift = np.array([-5.0, 100.0, 0.0, 3.0])
    a = normalize_table(table_from(base, zs))
    b = normalize_table(table_from(base * scale + shift, zs * scale + shift))
    assert np.allclose(a.values, b.values, atol=1e-9)


def test_normalize_literal_variant_global_affine_invariance() -> None:
    rng = np.random.default_rng(4)
    base = rng.uniform(20, 80, (6, 4))
    zs = rng.uniform(0, 10, 4)
    a = normalize_table(table_from(base, zs), literal_eq1=True)
    b = normalize_table(
        table_from(base * 3.0 + 7.0, zs * 3.0 + 7.0), literal_eq1=True
    )
    assert np.allclose(
        a.values[~a.missing], b.values[~b.missing], atol=1e-9
    )


def test_normalize_literal_variant_row_wise_denominator() -> None:
    table = table_from([[50.0, 80.0], [40.0, 60.0]], [20.0, 40.0])
    out = normalize_table(table, literal_eq1=True)
    # row maxima are 80 and 60; each cell divides by (row_max - column zero-shot)
    expected = np.array(
        [
            [(50 - 20) / (80 - 20), (80 - 40) / (80 - 40)],
            [(40 - 20) / (60 - 20), (60 - 40) / (60 - 40)],
        ]
    )
    assert np.allclose(out.values, expected)


def test_normalize_label_permutation_stability() -> None:
    rng = np.random.default_rng(9)
    values = rng.uniform(10, 90, (5, 4))
    zs = rng.uniform(0, 9, 4)
    sources = [f"s{i}" for i in range(5)]
    targets = [f"t{j}" for j in range(4)]
    out = normalize_table(table_from(values, zs, sources=sources, targets=targets))
    rp = np.array([3, 0, 4, 1, 2])
    cp = np.array([2, 0, 3, 1])
    permuted = normalize_table(
        table_from(
            values[rp][:, cp],
            zs[cp],
            sources=[sources[i] for i in rp],
            targets=[targets[j] for j in cp],
        )
    )
    assert np.allclose(permuted.values, out.values[rp][:, cp], atol=0)
    assert permuted.row_labels == tuple(sources[i] for i in rp)


def test_normalize_degenerate_column_marked_missing_with_warning() -> None:
    # best source equals zero-shot, denominator is zero
    table = table_from([[20.0, 30.0], [15.0, 40.0]], [20.0, 10.0])
    with pytest.warns(RuntimeWarning, match="near-zero"):
        out = normalize_table(table)
    assert out.missing[:, 0].all()
    assert not out.missing[:, 1].any()


def test_normalize_missing_zero_shot_marks_column_missing() -> None:
    table = table_from([[30.0, 30.0]], [np.nan, 20.0])
    with pytest.warns(RuntimeWarning):
        out = normalize_table(table)
    assert out.missing[0, 0]
    assert not out.missing[0, 1]


def test_normalize_missing_cells_propagate() -> None:
    table = table_from([[30.0], [np.nan], [60.0]], [20.0])
    out = normalize_table(table)
    assert out.missing[1, 0]
    assert out.values[2, 0] == 1.0


def test_aggregate_stacks_in_model_order() -> None:
    m1 = LabeledMatrix.complete(("s1", "s2"), ("t1", "t2"), np.eye(2))
    m2 = LabeledMatrix.complete(("s1", "s2"), ("t1", "t2"), 2 * np.eye(2))
    agg = aggregate_models([("alpha", m1), ("beta", m2)])
    assert agg.rows == (
        ("alpha", "s1"),
        ("alpha", "s2"),
        ("beta", "s1"),
        ("beta", "s2"),
    )
    assert agg.model_ids == ("alpha", "beta")
    assert np.array_equal(agg.values[:2], m1.values)
    assert np.array_equal(agg.values[2:], m2.values)
    assert agg.row_indices_for_model("beta").tolist() == [2, 3]


def test_aggregate_rejects_column_mismatch() -> None:
    m1 = LabeledMatrix.complete(("s1",), ("t1", "t2"), np.ones((1, 2)))
    m2 = LabeledMatrix.complete(("s1",), ("t2", "t1"), np.ones((1, 2)))
    with pytest.raises(DataFormatError, match="target columns"):
        aggregate_models([("a", m1), ("b", m2)])


def test_aggregate_rejects_empty_input() -> None:
    with pytest.raises(DataFormatError):
        aggregate_models([])


def test_zero_shot_means_skip_missing() -> None:
    t1 = table_from([[30.0, 40.0]], [10.0, np.nan], model_id="a")
    t2 = table_from([[30.0, 40.0]], [10.0, 30.0], model_id="b")
    means = zero_shot_means([t1, t2])
    assert means == {"a": 10.0, "b": 20.0}


def test_zero_shot_means_all_missing_is_an_error() -> None:
    t = table_from([[30.0]], [np.nan], model_id="a")
    with pytest.raises(NumericError, match="zero-shot"):
        zero_shot_means([t])


def test_aggregate_csv_round_trip(tmp_path: Path) -> None:
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        t1 = normalize_table(table_from([[30.0, 50.0], [60.0, np.nan]], [20.0, 10.0]))
        t2 = normalize_table(table_from([[35.0, 55.0], [45.0, 80.0]], [20.0, 10.0]))
    agg = aggregate_models([("a", t1), ("b", t2)])
    path = tmp_path / "agg.csv"
    write_aggregate_csv(agg, path)
    back = read_aggregate_csv(path)
    assert back.rows == agg.rows
    assert back.col_labels == agg.col_labels
    assert np.array_equal(back.missing, agg.missing)
    assert np.array_equal(back.values[~back.missing], agg.values[~agg.missing])
    path2 = tmp_path / "agg2.csv"
    write_aggregate_csv(back, path2)
    assert path2.read_bytes() == path.read_bytes()
