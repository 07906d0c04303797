"""File formats, schema validation, and round-trip behaviour."""

import json
from pathlib import Path

import numpy as np
import pytest

from taskfactor.data_model import (
    EvalMode,
    InDomainMap,
    LabeledMatrix,
    LengthBand,
    LengthBands,
    PerformanceTable,
    Role,
    TaskMeta,
    TaskRegistry,
    load_performance_table,
    load_task_metadata,
    read_labeled_csv,
    save_performance_table,
    validate_dataset,
    write_labeled_csv,
)
from taskfactor.errors import DataFormatError, ValidationFailure


def write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


GOOD_CSV = """source_task,tgt_a,tgt_b
src_1,10.5,20.0
src_2,NA,12.25
__zero_shot__,5.0,6.0
"""


def test_load_performance_table_values_and_missing(tmp_path: Path) -> None:
    table = load_performance_table(write(tmp_path / "m.csv", GOOD_CSV), "m1")
    assert table.model_id == "m1"
    assert table.source_ids == ("src_1", "src_2")
    assert table.target_ids == ("tgt_a", "tgt_b")
    assert table.values[0, 0] == 10.5
    assert table.missing[1, 0]
    assert np.isnan(table.values[1, 0])
    assert table.zero_shot.tolist() == [5.0, 6.0]
    assert not table.zero_shot_missing.any()


def test_round_trip_is_byte_identical(tmp_path: Path) -> None:
    src = write(tmp_path / "m.csv", GOOD_CSV)
    table = load_performance_table(src, "m1")
    out = tmp_path / "out.csv"
    save_performance_table(table, out)
    assert out.read_bytes() == src.read_bytes()
    # and a second pass through load/save is a fixed point
    again = tmp_path / "again.csv"
    save_performance_table(load_performance_table(out, "m1"), again)
    assert again.read_bytes() == out.read_bytes()


def test_missing_zero_shot_row_is_an_error(tmp_path: Path) -> None:
    bad = write(tmp_path / "m.csv", "source_task,t\nsrc,1.0\n")
    with pytest.raises(DataFormatError, match="__zero_shot__"):
        load_performance_table(bad, "m1")


def test_wrong_corner_cell_is_an_error(tmp_path: Path) -> None:
    bad = write(tmp_path / "m.csv", "task,t\nsrc,1.0\n__zero_shot__,0.0\n")
    with pytest.raises(DataFormatError, match="source_task"):
        load_performance_table(bad, "m1")


def test_duplicate_source_row_is_an_error(tmp_path: Path) -> None:
    bad = write(
        tmp_path / "m.csv",
        "source_task,t\nsrc,1.0\nsrc,2.0\n__zero_shot__,0.0\n",
    )
    with pytest.raises(DataFormatError, match="duplicate"):
        load_performance_table(bad, "m1")


def test_non_numeric_cell_names_location(tmp_path: Path) -> None:
    bad = write(
        tmp_path / "m.csv",
        "source_task,t\nsrc,oops\n__zero_shot__,0.0\n",
    )
    with pytest.raises(DataFormatError, match="row 2"):
        load_performance_table(bad, "m1")


def test_non_finite_literal_rejected(tmp_path: Path) -> None:
    bad = write(
        tmp_path / "m.csv",
        "source_task,t\nsrc,inf\n__zero_shot__,0.0\n",
    )
    with pytest.raises(DataFormatError, match="non-finite"):
        load_performance_table(bad, "m1")


def test_ragged_row_rejected(tmp_path: Path) -> None:
    bad = write(
        tmp_path / "m.csv",
        "source_task,t,u\nsrc,1.0\n__zero_shot__,0.0,0.0\n",
    )
    with pytest.raises(DataFormatError, match="row 2"):
        load_performance_table(bad, "m1")


def test_labeled_csv_round_trip(tmp_path: Path) -> None:
    m = LabeledMatrix(
        row_labels=("r1", "r2"),
        col_labels=("c1", "c2", "c3"),
        values=np.array([[1.0, np.nan, 0.125], [2.5, 3.0, np.nan]]),
        missing=np.array([[False, True, False], [False, False, True]]),
    )
    path = tmp_path / "m.csv"
    write_labeled_csv(m, path, corner="row")
    back = read_labeled_csv(path, corner="row")
    assert back.row_labels == m.row_labels
    assert back.col_labels == m.col_labels
    assert np.array_equal(back.missing, m.missing)
    assert np.array_equal(
        back.values[~back.missing], m.values[~m.missing]
    )
    # writing the re-read matrix reproduces the file exactly
    path2 = tmp_path / "m2.csv"
    write_labeled_csv(back, path2, corner="row")
    assert path2.read_bytes() == path.read_bytes()


def test_labeled_matrix_rejects_inconsistent_mask() -> None:
    with pytest.raises(DataFormatError):
        LabeledMatrix(
            row_labels=("r",),
            col_labels=("c",),
            values=np.array([[np.nan]]),
            missing=np.array([[False]]),
        )


def test_length_band_edges() -> None:
    bands = LengthBands()
    assert bands.band_of(1.0) is LengthBand.SHORT
    assert bands.band_of(3.0) is LengthBand.SHORT
    assert bands.band_of(5.0) is LengthBand.OTHER
    assert bands.band_of(6.0) is LengthBand.MEDIUM
    assert bands.band_of(12.0) is LengthBand.MEDIUM
    assert bands.band_of(20.0) is LengthBand.OTHER
    assert bands.band_of(40.0) is LengthBand.OTHER
    assert bands.band_of(40.5) is LengthBand.LONG
    assert bands.band_of(None) is None
    assert bands.label(LengthBand.SHORT) == "1-3"
    assert bands.label(LengthBand.LONG) == ">40"


def test_custom_band_edges() -> None:
    bands = LengthBands(short=(0.0, 2.0), medium=(4.0, 8.0), long_min=10.0)
    assert bands.band_of(2.0) is LengthBand.SHORT
    assert bands.band_of(3.0) is LengthBand.OTHER
    assert bands.band_of(11.0) is LengthBand.LONG


METADATA = {
    "tasks": [
        {
            "id": "src_1",
            "display_name": "Source One",
            "roles": ["source"],
            "eval_mode": "generative",
            "category": "captioning",
            "mean_output_length": 10.0,
            "metric_name": "cider",
        },
        {
            "id": "tgt_a",
            "roles": ["target"],
            "eval_mode": "multiple_choice",
            "mean_output_length": 1.5,
        },
        {"id": "both", "roles": ["source", "target"], "mean_output_length": 55.0},
    ],
    "in_domain": [["src_1", "tgt_a"]],
}


def test_load_task_metadata(tmp_path: Path) -> None:
    path = write(tmp_path / "meta.json", json.dumps(METADATA))
    registry, in_domain = load_task_metadata(path)
    assert len(registry) == 3
    src = registry["src_1"]
    assert src.display_name == "Source One"
    assert src.roles == frozenset({Role.SOURCE})
    assert src.eval_mode is EvalMode.GENERATIVE
    assert src.length_band is LengthBand.MEDIUM
    assert registry["tgt_a"].length_band is LengthBand.SHORT
    assert registry["both"].length_band is LengthBand.LONG
    assert in_domain.is_in_domain("src_1", "tgt_a")
    assert not in_domain.is_in_domain("tgt_a", "src_1")


def test_metadata_explicit_band_overrides_derivation(tmp_path: Path) -> None:
    doc = {
        "tasks": [
            {
                "id": "x",
                "roles": ["source"],
                "mean_output_length": 2.0,
                "length_band": "other",
            }
        ]
    }
    registry, _ = load_task_metadata(write(tmp_path / "m.json", json.dumps(doc)))
    assert registry["x"].length_band is LengthBand.OTHER


def test_metadata_rejects_unknown_in_domain_id(tmp_path: Path) -> None:
    doc = {
        "tasks": [{"id": "a", "roles": ["source"]}],
        "in_domain": [["a", "ghost"]],
    }
    with pytest.raises(DataFormatError, match="ghost"):
        load_task_metadata(write(tmp_path / "m.json", json.dumps(doc)))


def test_metadata_rejects_bad_length(tmp_path: Path) -> None:
    doc = {"tasks": [{"id": "a", "roles": ["source"], "mean_output_length": -1}]}
    with pytest.raises(DataFormatError):
        load_task_metadata(write(tmp_path / "m.json", json.dumps(doc)))


def make_table(model_id: str, sources, targets, seed: int = 0) -> PerformanceTable:
    rng = np.random.default_rng(seed)
    n, k = len(sources), len(targets)
    return PerformanceTable(
        model_id=model_id,
        source_ids=tuple(sources),
        target_ids=tuple(targets),
        values=rng.uniform(10, 90, size=(n, k)),
        missing=np.zeros((n, k), dtype=bool),
        zero_shot=rng.uniform(0, 10, size=k),
        zero_shot_missing=np.zeros(k, dtype=bool),
    )


def make_registry(sources, targets) -> TaskRegistry:
    reg = TaskRegistry()
    for s in sources:
        if s not in reg:
            reg.add(TaskMeta(id=s, display_name=s, roles=frozenset({Role.SOURCE})))
    for t in targets:
        if t in reg:
            continue
        reg.add(TaskMeta(id=t, display_name=t, roles=frozenset({Role.TARGET})))
    return reg


def test_validate_dataset_passes_clean_data() -> None:
    sources = ["s1", "s2"]
    targets = ["t1", "t2", "t3"]
    tables = [make_table("m1", sources, targets), make_table("m2", sources, targets)]
    report = validate_dataset(tables, make_registry(sources, targets), InDomainMap())
    assert report.passed
    assert not report.findings


def test_validate_dataset_flags_target_misalignment() -> None:
    sources = ["s1"]
    tables = [
        make_table("m1", sources, ["t1", "t2"]),
        make_table("m2", sources, ["t2", "t1"]),
    ]
    report = validate_dataset(
        tables, make_registry(sources, ["t1", "t2"]), InDomainMap()
    )
    assert not report.passed
    assert any(f.code == "target-misalignment" for f in report.errors)


def test_validate_dataset_flags_in_domain_role_violation() -> None:
    sources = ["s1"]
    targets = ["t1"]
    tables = [make_table("m1", sources, targets)]
    registry = make_registry(sources, targets)
    # t1 is target-only but used as the source of an in-domain pair
    in_domain = InDomainMap(pairs=frozenset({("t1", "t1")}))
    report = validate_dataset(tables, registry, in_domain)
    assert any(f.code == "in-domain-role" for f in report.errors)


def test_validate_dataset_flags_role_mismatch_and_unknown() -> None:
    tables = [make_table("m1", ["s1", "t_only"], ["t1", "ghost"])]
    registry = make_registry(["s1"], ["t1", "t_only"])
    report = validate_dataset(tables, registry, InDomainMap())
    codes = {f.code for f in report.errors}
    assert "role-mismatch" in codes
    assert "unknown-task" in codes


def test_validate_dataset_missing_cells_warn_only() -> None:
    table = make_table("m1", ["s1", "s2"], ["t1", "t2"])
    values = table.values.copy()
    missing = table.missing.copy()
    values[0, 1] = np.nan
    missing[0, 1] = True
    table = PerformanceTable(
        model_id=table.model_id,
        source_ids=table.source_ids,
        target_ids=table.target_ids,
        values=values,
        missing=missing,
        zero_shot=table.zero_shot,
        zero_shot_missing=table.zero_shot_missing,
    )
    report = validate_dataset(
        [table], make_registry(["s1", "s2"], ["t1", "t2"]), InDomainMap()
    )
    assert report.passed
    assert any(f.code == "missing-cells" for f in report.warnings)


def test_validate_dataset_strict_raises() -> None:
    tables = [
        make_table("m1", ["s1"], ["t1"]),
        make_table("m1", ["s1"], ["t1"]),
    ]
    registry = make_registry(["s1"], ["t1"])
    with pytest.raises(ValidationFailure, match="duplicate-model"):
        validate_dataset(tables, registry, InDomainMap(), strict=True)
