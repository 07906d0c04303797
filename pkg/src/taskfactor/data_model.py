"""Core data types and file formats.

Performance tables arrive as CSV, one file per model: the header row is
``source_task`` followed by target-task ids, each body row is a source
task's transfer scores, and the reserved row ``__zero_shot__`` holds the
no-transfer baseline per target. Missing cells use the sentinel ``NA``.
Task metadata (roles, categories, output lengths, in-domain pairs) arrives
as a single JSON document.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ValidationFailure

ZERO_SHOT_LABEL = "__zero_shot__"
MISSING_SENTINEL = "NA"
PERFORMANCE_CORNER = "source_task"

__all__ = [
    "ZERO_SHOT_LABEL",
    "MISSING_SENTINEL",
    "Role",
    "EvalMode",
    "LengthBand",
    "LengthBands",
    "TaskMeta",
    "TaskRegistry",
    "InDomainMap",
    "PerformanceTable",
    "LabeledMatrix",
    "Finding",
    "ValidationReport",
    "format_value",
    "load_performance_table",
    "save_performance_table",
    "load_task_metadata",
    "read_labeled_csv",
    "write_labeled_csv",
    "validate_dataset",
]


class Role(str, Enum):
    SOURCE = "source"
    TARGET = "target"


class EvalMode(str, Enum):
    GENERATIVE = "generative"
    MULTIPLE_CHOICE = "multiple_choice"
    NOT_APPLICABLE = "not_applicable"


class LengthBand(str, Enum):
    """Output-length bucket; edges live in :class:`LengthBands`."""

    SHORT = "short"
    MEDIUM = "medium"
    LONG = "long"
    OTHER = "other"


@dataclass(frozen=True)
class LengthBands:
    """Configurable edges for the output-length buckets.

    Defaults bucket mean output lengths into [1, 3] words, [6, 12] words,
    and strictly more than 40 words; anything between or below falls into
    ``other``.
    """

    short: tuple[float, float] = (1.0, 3.0)
    medium: tuple[float, float] = (6.0, 12.0)
    long_min: float = 40.0

    def band_of(self, mean_output_length: float | None) -> LengthBand | None:
        if mean_output_length is None:
            return None
        x = float(mean_output_length)
        if self.short[0] <= x <= self.short[1]:
            return LengthBand.SHORT
        if self.medium[0] <= x <= self.medium[1]:
            return LengthBand.MEDIUM
        if x > self.long_min:
            return LengthBand.LONG
        return LengthBand.OTHER

    def label(self, band: LengthBand) -> str:
        if band is LengthBand.SHORT:
            return f"{self.short[0]:g}-{self.short[1]:g}"
        if band is LengthBand.MEDIUM:
            return f"{self.medium[0]:g}-{self.medium[1]:g}"
        if band is LengthBand.LONG:
            return f">{self.long_min:g}"
        return "other"


DEFAULT_BANDS = LengthBands()


@dataclass(frozen=True)
class TaskMeta:
    """Descriptive metadata for one task."""

    id: str
    display_name: str
    roles: frozenset[Role]
    eval_mode: EvalMode = EvalMode.NOT_APPLICABLE
    category: str = "uncategorized"
    mean_output_length: float | None = None
    length_band: LengthBand | None = None
    metric_name: str = "score"

    def __post_init__(self) -> None:
        if not self.id:
            raise DataFormatError("task id must be non-empty")
        if not self.roles:
            raise DataFormatError(f"task {self.id!r} declares no roles")
        if self.mean_output_length is not None and not (
            np.isfinite(self.mean_output_length) and self.mean_output_length > 0
        ):
            raise DataFormatError(
                f"task {self.id!r} has non-positive mean_output_length"
            )


class TaskRegistry:
    """Ordered collection of :class:`TaskMeta`, unique by id."""

    def __init__(self, tasks: list[TaskMeta] | None = None) -> None:
        self._tasks: dict[str, TaskMeta] = {}
        for t in tasks or []:
            self.add(t)

    def add(self, task: TaskMeta) -> None:
        if task.id in self._tasks:
            raise DataFormatError(f"duplicate task id {task.id!r}")
        self._tasks[task.id] = task

    def __contains__(self, task_id: str) -> bool:
        return task_id in self._tasks

    def __getitem__(self, task_id: str) -> TaskMeta:
        try:
            return self._tasks[task_id]
        except KeyError:
            raise DataFormatError(f"unknown task id {task_id!r}") from None

    def get(self, task_id: str) -> TaskMeta | None:
        return self._tasks.get(task_id)

    def __iter__(self):
        return iter(self._tasks.values())

    def __len__(self) -> int:
        return len(self._tasks)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._tasks)


@dataclass(frozen=True)
class InDomainMap:
    """Set of (source_id, target_id) pairs considered in-domain."""

    pairs: frozenset[tuple[str, str]] = field(default_factory=frozenset)

    def is_in_domain(self, source_id: str, target_id: str) -> bool:
        return (source_id, target_id) in self.pairs


def _check_labels(labels: tuple[str, ...], what: str) -> None:
    if not labels:
        raise DataFormatError(f"{what} labels must be non-empty")
    if any(not x for x in labels):
        raise DataFormatError(f"{what} labels contain an empty id")
    if len(set(labels)) != len(labels):
        dup = sorted({x for x in labels if labels.count(x) > 1})
        raise DataFormatError(f"duplicate {what} ids: {dup}")


def _check_values_mask(values: np.ndarray, missing: np.ndarray, what: str) -> None:
    if values.shape != missing.shape:
        raise DataFormatError(f"{what}: values and missing mask shapes differ")
    if missing.dtype != bool:
        raise DataFormatError(f"{what}: missing mask must be boolean")
    present = ~missing
    if not np.all(np.isfinite(values[present])):
        raise DataFormatError(f"{what}: non-finite value not marked missing")
    if not np.all(np.isnan(values[missing])):
        raise DataFormatError(f"{what}: missing cells must hold NaN")


@dataclass(frozen=True)
class PerformanceTable:
    """One model's transfer scores: sources in rows, targets in columns.

    ``values[i, j]`` is the score on target ``target_ids[j]`` after
    transfer from source ``source_ids[i]``; ``zero_shot[j]`` is the score
    with no transfer at all. Missing cells hold NaN and are flagged in the
    boolean masks.
    """

    model_id: str
    source_ids: tuple[str, ...]
    target_ids: tuple[str, ...]
    values: np.ndarray
    missing: np.ndarray
    zero_shot: np.ndarray
    zero_shot_missing: np.ndarray

    def __post_init__(self) -> None:
        if not self.model_id:
            raise DataFormatError("model_id must be non-empty")
        _check_labels(self.source_ids, "source")
        _check_labels(self.target_ids, "target")
        n, k = len(self.source_ids), len(self.target_ids)
        if self.values.shape != (n, k):
            raise DataFormatError(
                f"values shape {self.values.shape} does not match "
                f"{n} sources x {k} targets"
            )
        _check_values_mask(self.values, self.missing, "performance values")
        if self.zero_shot.shape != (k,) or self.zero_shot_missing.shape != (k,):
            raise DataFormatError("zero-shot row shape does not match targets")
        _check_values_mask(self.zero_shot, self.zero_shot_missing, "zero-shot row")

    @property
    def n_sources(self) -> int:
        return len(self.source_ids)

    @property
    def n_targets(self) -> int:
        return len(self.target_ids)


@dataclass(frozen=True)
class LabeledMatrix:
    """A float matrix with row and column labels and an explicit missing mask."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self) -> None:
        _check_labels(self.row_labels, "row")
        _check_labels(self.col_labels, "column")
        shape = (len(self.row_labels), len(self.col_labels))
        if self.values.shape != shape:
            raise DataFormatError(
                f"matrix shape {self.values.shape} does not match labels {shape}"
            )
        _check_values_mask(self.values, self.missing, "labeled matrix")

    @classmethod
    def complete(
        cls,
        row_labels: tuple[str, ...],
        col_labels: tuple[str, ...],
        values: np.ndarray,
    ) -> "LabeledMatrix":
        """Build a matrix with no missing cells."""
        return cls(
            row_labels=row_labels,
            col_labels=col_labels,
            values=np.asarray(values, dtype=float),
            missing=np.zeros(np.asarray(values).shape, dtype=bool),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_missing(self) -> int:
        return int(self.missing.sum())


def format_value(x: float) -> str:
    """Shortest exact decimal form of a float, for byte-stable CSV output."""
    return repr(float(x))


def _parse_cell(cell: str, where: str) -> tuple[float, bool]:
    text = cell.strip()
    if text == MISSING_SENTINEL:
        return float("nan"), True
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"non-numeric cell {cell!r} at {where}") from None
    if not np.isfinite(value):
        raise DataFormatError(f"non-finite cell {cell!r} at {where}")
    return value, False


def _read_csv_rows(path: Path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    return rows


def load_performance_table(path: str | Path, model_id: str) -> PerformanceTable:
    """Read one model's performance CSV.

    Raises
    ------
    DataFormatError
        On a malformed header, duplicate ids, ragged rows, non-numeric
        cells, or a missing ``__zero_shot__`` row.
    """
    path = Path(path)
    rows = _read_csv_rows(path)
    header = rows[0]
    if header[0].strip() != PERFORMANCE_CORNER:
        raise DataFormatError(
            f"{path}: first header cell must be {PERFORMANCE_CORNER!r}, "
            f"got {header[0]!r}"
        )
    target_ids = tuple(c.strip() for c in header[1:])
    _check_labels(target_ids, "target")

    source_ids: list[str] = []
    data: list[list[float]] = []
    mask: list[list[bool]] = []
    zero_shot: list[float] | None = None
    zero_mask: list[bool] | None = None
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(target_ids) + 1:
            raise DataFormatError(
                f"{path}: row {r} has {len(row)} cells, expected "
                f"{len(target_ids) + 1}"
            )
        label = row[0].strip()
        parsed = [_parse_cell(c, f"{path} row {r}") for c in row[1:]]
        vals = [p[0] for p in parsed]
        miss = [p[1] for p in parsed]
        if label == ZERO_SHOT_LABEL:
            if zero_shot is not None:
                raise DataFormatError(f"{path}: duplicate {ZERO_SHOT_LABEL} row")
            zero_shot, zero_mask = vals, miss
        else:
            source_ids.append(label)
            data.append(vals)
            mask.append(miss)
    if zero_shot is None:
        raise DataFormatError(f"{path}: required row {ZERO_SHOT_LABEL!r} not found")
    if not source_ids:
        raise DataFormatError(f"{path}: no source rows")
    return PerformanceTable(
        model_id=model_id,
        source_ids=tuple(source_ids),
        target_ids=target_ids,
        values=np.array(data, dtype=float),
        missing=np.array(mask, dtype=bool),
        zero_shot=np.array(zero_shot, dtype=float),
        zero_shot_missing=np.array(zero_mask, dtype=bool),
    )


def _format_row(label: str, values: np.ndarray, missing: np.ndarray) -> list[str]:
    cells = [label]
    for v, m in zip(values, missing):
        cells.append(MISSING_SENTINEL if m else format_value(v))
    return cells


def save_performance_table(table: PerformanceTable, path: str | Path) -> None:
    """Write the canonical CSV form: sources in order, zero-shot row last."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([PERFORMANCE_CORNER, *table.target_ids])
        for i, sid in enumerate(table.source_ids):
            writer.writerow(_format_row(sid, table.values[i], table.missing[i]))
        writer.writerow(
            _format_row(ZERO_SHOT_LABEL, table.zero_shot, table.zero_shot_missing)
        )


def read_labeled_csv(path: str | Path, corner: str | None = None) -> LabeledMatrix:
    """Read a labeled matrix CSV (corner cell, column ids, one label per row)."""
    path = Path(path)
    rows = _read_csv_rows(path)
    header = rows[0]
    if corner is not None and header[0].strip() != corner:
        raise DataFormatError(
            f"{path}: first header cell must be {corner!r}, got {header[0]!r}"
        )
    col_labels = tuple(c.strip() for c in header[1:])
    row_labels: list[str] = []
    data: list[list[float]] = []
    mask: list[list[bool]] = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(col_labels) + 1:
            raise DataFormatError(f"{path}: row {r} has wrong cell count")
        row_labels.append(row[0].strip())
        parsed = [_parse_cell(c, f"{path} row {r}") for c in row[1:]]
        data.append([p[0] for p in parsed])
        mask.append([p[1] for p in parsed])
    return LabeledMatrix(
        row_labels=tuple(row_labels),
        col_labels=col_labels,
        values=np.array(data, dtype=float),
        missing=np.array(mask, dtype=bool),
    )


def write_labeled_csv(
    matrix: LabeledMatrix, path: str | Path, corner: str
) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([corner, *matrix.col_labels])
        for i, label in enumerate(matrix.row_labels):
            writer.writerow(_format_row(label, matrix.values[i], matrix.missing[i]))


_ROLE_VALUES = {r.value: r for r in Role}
_MODE_VALUES = {m.value: m for m in EvalMode}
_BAND_VALUES = {b.value: b for b in LengthBand}


def _parse_task_record(
    rec: dict, bands: LengthBands, where: str
) -> TaskMeta:
    if not isinstance(rec, dict):
        raise DataFormatError(f"{where}: task record must be an object")
    if "id" not in rec:
        raise DataFormatError(f"{where}: task record lacks 'id'")
    task_id = rec["id"]
    roles_raw = rec.get("roles")
    if not isinstance(roles_raw, list) or not roles_raw:
        raise DataFormatError(f"{where}: task {task_id!r} needs a 'roles' list")
    roles = set()
    for r in roles_raw:
        if r not in _ROLE_VALUES:
            raise DataFormatError(f"{where}: task {task_id!r} has unknown role {r!r}")
        roles.add(_ROLE_VALUES[r])
    mode_raw = rec.get("eval_mode", EvalMode.NOT_APPLICABLE.value)
    if mode_raw not in _MODE_VALUES:
        raise DataFormatError(
            f"{where}: task {task_id!r} has unknown eval_mode {mode_raw!r}"
        )
    length = rec.get("mean_output_length")
    if length is not None:
        try:
            length = float(length)
        except (TypeError, ValueError):
            raise DataFormatError(
                f"{where}: task {task_id!r} has non-numeric mean_output_length"
            ) from None
    band_raw = rec.get("length_band")
    if band_raw is not None:
        if band_raw not in _BAND_VALUES:
            raise DataFormatError(
                f"{where}: task {task_id!r} has unknown length_band {band_raw!r}"
            )
        band = _BAND_VALUES[band_raw]
    else:
        band = bands.band_of(length)
    return TaskMeta(
        id=task_id,
        display_name=rec.get("display_name", task_id),
        roles=frozenset(roles),
        eval_mode=_MODE_VALUES[mode_raw],
        category=rec.get("category", "uncategorized"),
        mean_output_length=length,
        length_band=band,
        metric_name=rec.get("metric_name", "score"),
    )


def load_task_metadata(
    path: str | Path, bands: LengthBands = DEFAULT_BANDS
) -> tuple[TaskRegistry, InDomainMap]:
    """Read the task metadata JSON document.

    The document holds a ``tasks`` array and an optional ``in_domain``
    array of ``[source_id, target_id]`` pairs. Length bands are derived
    from ``mean_output_length`` with the supplied edges unless a record
    sets ``length_band`` explicitly.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or "tasks" not in doc:
        raise DataFormatError(f"{path}: expected an object with a 'tasks' array")
    registry = TaskRegistry()
    for rec in doc["tasks"]:
        registry.add(_parse_task_record(rec, bands, str(path)))
    pairs: set[tuple[str, str]] = set()
    for entry in doc.get("in_domain", []):
        if (
            not isinstance(entry, list)
            or len(entry) != 2
            or not all(isinstance(x, str) for x in entry)
        ):
            raise DataFormatError(
                f"{path}: in_domain entries must be [source_id, target_id]"
            )
        src, tgt = entry
        for tid in (src, tgt):
            if tid not in registry:
                raise DataFormatError(
                    f"{path}: in_domain references unknown task {tid!r}"
                )
        pairs.add((src, tgt))
    return registry, InDomainMap(pairs=frozenset(pairs))


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" or "warning"
    code: str
    message: str


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "warning"]

    @property
    def passed(self) -> bool:
        return not self.errors

    def summary(self) -> str:
        if not self.findings:
            return "validation passed: no findings"
        lines = [f"[{f.severity}] {f.code}: {f.message}" for f in self.findings]
        return "\n".join(lines)


def validate_dataset(
    tables: list[PerformanceTable],
    registry: TaskRegistry,
    in_domain: InDomainMap,
    strict: bool = False,
) -> ValidationReport:
    """Cross-check performance tables against the task metadata.

    Blocking findings: duplicate model ids, target columns that differ in
    content or order between tables, ids absent from the registry, ids
    used against their declared roles (including in-domain pairs).
    Missing cells and differing source sets only warn.

    When ``strict`` is true a report with errors raises
    :class:`ValidationFailure` instead of being returned.
    """
    report = ValidationReport()

    def err(code: str, message: str) -> None:
        report.findings.append(Finding("error", code, message))

    def warn(code: str, message: str) -> None:
        report.findings.append(Finding("warning", code, message))

    if not tables:
        err("no-tables", "no performance tables supplied")
    seen_models: set[str] = set()
    for t in tables:
        if t.model_id in seen_models:
            err("duplicate-model", f"model id {t.model_id!r} appears twice")
        seen_models.add(t.model_id)

    if tables:
        ref = tables[0]
        for t in tables[1:]:
            if t.target_ids != ref.target_ids:
                err(
                    "target-misalignment",
                    f"model {t.model_id!r} target columns differ from "
                    f"model {ref.model_id!r} (content or order)",
                )
        ref_sources = set(ref.source_ids)
        for t in tables[1:]:
            if set(t.source_ids) != ref_sources:
                warn(
                    "source-mismatch",
                    f"model {t.model_id!r} source rows differ from "
                    f"model {ref.model_id!r}",
                )

    for t in tables:
        for sid in t.source_ids:
            meta = registry.get(sid)
            if meta is None:
                err("unknown-task", f"source {sid!r} (model {t.model_id!r}) "
                    "is not in the registry")
            elif Role.SOURCE not in meta.roles:
                err("role-mismatch", f"task {sid!r} used as source but lacks "
                    "the source role")
        for tid in t.target_ids:
            meta = registry.get(tid)
            if meta is None:
                err("unknown-task", f"target {tid!r} (model {t.model_id!r}) "
                    "is not in the registry")
            elif Role.TARGET not in meta.roles:
                err("role-mismatch", f"task {tid!r} used as target but lacks "
                    "the target role")
        n_miss = int(t.missing.sum()) + int(t.zero_shot_missing.sum())
        if n_miss:
            warn("missing-cells", f"model {t.model_id!r} has {n_miss} missing cells")

    for src, tgt in sorted(in_domain.pairs):
        src_meta = registry.get(src)
        tgt_meta = registry.get(tgt)
        if src_meta is None or tgt_meta is None:
            missing = src if src_meta is None else tgt
            err("unknown-task", f"in_domain pair ({src!r}, {tgt!r}) references "
                f"unknown task {missing!r}")
            continue
        if Role.SOURCE not in src_meta.roles:
            err("in-domain-role", f"in_domain pair ({src!r}, {tgt!r}): "
                f"{src!r} lacks the source role")
        if Role.TARGET not in tgt_meta.roles:
            err("in-domain-role", f"in_domain pair ({src!r}, {tgt!r}): "
                f"{tgt!r} lacks the target role")

    if strict and not report.passed:
        raise ValidationFailure(report.summary())
    return report
