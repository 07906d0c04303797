"""Transfer-score normalization and cross-model aggregation.

Raw scores live on incomparable per-target scales. Each target column is
rescaled against its own zero-shot baseline so that 0 means "no better
than zero-shot" and 1 means "as good as the best source for this target":

    a = (b - b_zero_shot) / (b_best_source - b_zero_shot)

The denominator's best-source score is the per-column maximum over source
rows, never counting the zero-shot row itself. A literal row-wise variant
(each row rescaled by its own best target score) is kept behind a flag
for comparison; it marks cells with near-zero denominators missing
instead of whole columns.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import (
    MISSING_SENTINEL,
    LabeledMatrix,
    PerformanceTable,
    _check_labels,
    _check_values_mask,
    _parse_cell,
    _read_csv_rows,
    format_value,
)
from .errors import DataFormatError, NumericError

DENOM_EPS = 1e-9

AGGREGATE_MODEL_COLUMN = "model"
AGGREGATE_SOURCE_COLUMN = "source_task"

__all__ = [
    "DENOM_EPS",
    "AggregateMatrix",
    "normalize_table",
    "aggregate_models",
    "zero_shot_means",
    "read_aggregate_csv",
    "write_aggregate_csv",
]


@dataclass(frozen=True)
class AggregateMatrix:
    """Normalized rows from several models stacked into one matrix.

    ``rows[i]`` is the ``(model_id, source_id)`` pair that produced row
    ``i``; rows keep the model input order, and within a model the source
    order of its table.
    """

    rows: tuple[tuple[str, str], ...]
    col_labels: tuple[str, ...]
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self) -> None:
        if not self.rows:
            raise DataFormatError("aggregate matrix has no rows")
        if len(set(self.rows)) != len(self.rows):
            raise DataFormatError("duplicate (model, source) row in aggregate")
        _check_labels(self.col_labels, "column")
        shape = (len(self.rows), len(self.col_labels))
        if self.values.shape != shape:
            raise DataFormatError(
                f"aggregate shape {self.values.shape} does not match {shape}"
            )
        _check_values_mask(self.values, self.missing, "aggregate matrix")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def model_ids(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for model_id, _ in self.rows:
            seen.setdefault(model_id)
        return tuple(seen)

    def row_indices_for_model(self, model_id: str) -> np.ndarray:
        return np.array(
            [i for i, (m, _) in enumerate(self.rows) if m == model_id], dtype=int
        )

    def to_labeled(self, sep: str = "::") -> LabeledMatrix:
        """Flatten the (model, source) row keys into single labels."""
        return LabeledMatrix(
            row_labels=tuple(f"{m}{sep}{s}" for m, s in self.rows),
            col_labels=self.col_labels,
            values=self.values,
            missing=self.missing,
        )


def normalize_table(
    table: PerformanceTable, literal_eq1: bool = False
) -> LabeledMatrix:
    """Rescale one model's scores against zero-shot and best-source anchors.

    Parameters
    ----------
    table : PerformanceTable
    literal_eq1 : bool
        Default (False): the denominator for column j is
        ``max_i b[i, j] - zero_shot[j]``, so the best source row scores
        exactly 1 in its column. A column whose zero-shot value is missing,
        whose scores are all missing, or whose denominator magnitude is
        below ``DENOM_EPS`` comes out all-missing with a warning.
        Literal variant (True): the denominator for cell (i, j) is
        ``max_j' b[i, j'] - zero_shot[j]``, the row's best score against
        the column's baseline; near-zero denominators mark single cells
        missing.

    Returns
    -------
    LabeledMatrix
        Sources in rows, targets in columns, same label order as the
        input table. Missing inputs stay missing.
    """
    values = table.values
    missing = table.missing
    b0 = table.zero_shot
    b0_missing = table.zero_shot_missing
    n, k = values.shape
    out = np.full((n, k), np.nan)
    out_missing = np.ones((n, k), dtype=bool)

    if not literal_eq1:
        for j in range(k):
            col = values[:, j]
            col_present = ~missing[:, j]
            if b0_missing[j] or not col_present.any():
                warnings.warn(
                    f"target {table.target_ids[j]!r} cannot be normalized "
                    "(no zero-shot or no scores); column marked missing",
                    RuntimeWarning,
                    stacklevel=2,
                )
                continue
            best = float(np.max(col[col_present]))
            denom = best - float(b0[j])
            if abs(denom) < DENOM_EPS:
                warnings.warn(
                    f"target {table.target_ids[j]!r} has a near-zero "
                    "normalization denominator; column marked missing",
                    RuntimeWarning,
                    stacklevel=2,
                )
                continue
            out[col_present, j] = (col[col_present] - b0[j]) / denom
            out_missing[col_present, j] = False
    else:
        row_best = np.full(n, np.nan)
        for i in range(n):
            present = ~missing[i]
            if present.any():
                row_best[i] = float(np.max(values[i, present]))
        n_cell_warn = 0
        for j in range(k):
            if b0_missing[j]:
                warnings.warn(
                    f"target {table.target_ids[j]!r} has no zero-shot value; "
                    "column marked missing",
                    RuntimeWarning,
                    stacklevel=2,
                )
                continue
            for i in range(n):
                if missing[i, j] or np.isnan(row_best[i]):
                    continue
                denom = row_best[i] - float(b0[j])
                if abs(denom) < DENOM_EPS:
                    n_cell_warn += 1
                    continue
                out[i, j] = (values[i, j] - b0[j]) / denom
                out_missing[i, j] = False
        if n_cell_warn:
            warnings.warn(
                f"{n_cell_warn} cells had near-zero row-wise denominators "
                "and were marked missing",
                RuntimeWarning,
                stacklevel=2,
            )
    return LabeledMatrix(
        row_labels=table.source_ids,
        col_labels=table.target_ids,
        values=out,
        missing=out_missing,
    )


def aggregate_models(
    normalized: list[tuple[str, LabeledMatrix]]
) -> AggregateMatrix:
    """Stack per-model normalized matrices into one row block per model.

    All matrices must share identical target columns (content and order).
    """
    if not normalized:
        raise DataFormatError("aggregate_models needs at least one matrix")
    ref_cols = normalized[0][1].col_labels
    for model_id, m in normalized[1:]:
        if m.col_labels != ref_cols:
            raise DataFormatError(
                f"model {model_id!r} target columns differ from "
                f"model {normalized[0][0]!r}"
            )
    rows: list[tuple[str, str]] = []
    blocks: list[np.ndarray] = []
    masks: list[np.ndarray] = []
    for model_id, m in normalized:
        rows.extend((model_id, src) for src in m.row_labels)
        blocks.append(m.values)
        masks.append(m.missing)
    return AggregateMatrix(
        rows=tuple(rows),
        col_labels=ref_cols,
        values=np.vstack(blocks),
        missing=np.vstack(masks),
    )


def zero_shot_means(tables: list[PerformanceTable]) -> dict[str, float]:
    """Mean zero-shot score per model over targets with a baseline present."""
    out: dict[str, float] = {}
    for t in tables:
        present = ~t.zero_shot_missing
        if not present.any():
            raise NumericError(
                f"model {t.model_id!r} has no zero-shot values at all"
            )
        out[t.model_id] = float(np.mean(t.zero_shot[present]))
    return out


def write_aggregate_csv(matrix: AggregateMatrix, path: str | Path) -> None:
    """Write the aggregate as CSV with two leading id columns."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [AGGREGATE_MODEL_COLUMN, AGGREGATE_SOURCE_COLUMN, *matrix.col_labels]
        )
        for i, (model_id, source_id) in enumerate(matrix.rows):
            cells = [model_id, source_id]
            for v, m in zip(matrix.values[i], matrix.missing[i]):
                cells.append(MISSING_SENTINEL if m else format_value(v))
            writer.writerow(cells)


def read_aggregate_csv(path: str | Path) -> AggregateMatrix:
    path = Path(path)
    rows = _read_csv_rows(path)
    header = rows[0]
    if len(header) < 3 or (
        header[0].strip() != AGGREGATE_MODEL_COLUMN
        or header[1].strip() != AGGREGATE_SOURCE_COLUMN
    ):
        raise DataFormatError(
            f"{path}: aggregate header must start with "
            f"{AGGREGATE_MODEL_COLUMN!r},{AGGREGATE_SOURCE_COLUMN!r}"
        )
    col_labels = tuple(c.strip() for c in header[2:])
    keys: list[tuple[str, str]] = []
    data: list[list[float]] = []
    mask: list[list[bool]] = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(col_labels) + 2:
            raise DataFormatError(f"{path}: row {r} has wrong cell count")
        keys.append((row[0].strip(), row[1].strip()))
        parsed = [_parse_cell(c, f"{path} row {r}") for c in row[2:]]
        data.append([p[0] for p in parsed])
        mask.append([p[1] for p in parsed])
    return AggregateMatrix(
        rows=tuple(keys),
        col_labels=col_labels,
        values=np.array(data, dtype=float),
        missing=np.array(mask, dtype=bool),
    )
