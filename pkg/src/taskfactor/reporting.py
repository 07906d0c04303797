"""Summary statistics over normalized transfer results.

Rankings: per model, sources are ranked by their total normalized
contribution (row sum over targets); competition ranking, so tied sums
share a rank and the next rank skips. Sources are then scored by the
harmonic mean of their per-model ranks, which rewards sources that rank
highly for every model.

Length cross table: sources and targets fall into output-length bands
and every (source band, target band) cell averages the normalized
transfer between them, excluding in-domain pairs. Next to the plain mean
each cell reports the mean restricted to the cell's five strongest
sources, and each target band lists its five strongest sources overall.

Diversity: Shannon entropy of a word-frequency table, and a generalized
variance (product of leading covariance eigenvalues) of feature rows.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .data_model import (
    InDomainMap,
    LabeledMatrix,
    LengthBand,
    LengthBands,
    DEFAULT_BANDS,
    TaskRegistry,
)
from .errors import DataFormatError, NumericError
from .normalization import AggregateMatrix
from .numkernels import sym_eig

__all__ = [
    "RankingRow",
    "RankingTable",
    "harmonic_rank",
    "CellStats",
    "LengthCrossTable",
    "length_group_table",
    "word_entropy",
    "read_token_counts_text",
    "read_token_counts_csv",
    "generalized_variance",
]


@dataclass(frozen=True)
class RankingRow:
    source_id: str
    ranks: tuple[int, ...]
    score: float


@dataclass(frozen=True)
class RankingTable:
    model_ids: tuple[str, ...]
    rows: tuple[RankingRow, ...]


def _competition_ranks(sums: np.ndarray) -> np.ndarray:
    """Ranks with ties sharing the best position (1, 1, 3 style)."""
    order = np.argsort(-sums, kind="stable")
    ranks = np.empty(len(sums), dtype=int)
    rank = 0
    prev = None
    for pos, idx in enumerate(order, start=1):
        if prev is None or sums[idx] != prev:
            rank = pos
            prev = sums[idx]
        ranks[idx] = rank
    return ranks


def harmonic_rank(
    per_model: list[tuple[str, LabeledMatrix]]
) -> RankingTable:
    """Score sources by the harmonic mean of their per-model ranks.

    Every matrix must cover the same sources and targets (order may
    differ; rows are aligned by label). A source's rank within a model
    is the competition rank of its row sum over non-missing targets,
    higher sums ranking first. The final score per source is
    ``M / sum_m (1 / rank_m)``; lower is better. Rows with every target
    missing in some model are an error.
    """
    if not per_model:
        raise DataFormatError("harmonic_rank needs at least one matrix")
    ref_sources = sorted(per_model[0][1].row_labels)
    for model_id, m in per_model:
        if sorted(m.row_labels) != ref_sources:
            raise DataFormatError(
                f"model {model_id!r} covers different sources"
            )
        if sorted(m.col_labels) != sorted(per_model[0][1].col_labels):
            raise DataFormatError(
                f"model {model_id!r} covers different targets"
            )
    source_order = per_model[0][1].row_labels
    all_ranks = np.empty((len(source_order), len(per_model)), dtype=int)
    for j, (model_id, m) in enumerate(per_model):
        lookup = {label: i for i, label in enumerate(m.row_labels)}
        sums = np.empty(len(source_order))
        for i, sid in enumerate(source_order):
            row = m.values[lookup[sid]]
            present = ~m.missing[lookup[sid]]
            if not present.any():
                raise NumericError(
                    f"source {sid!r} has no usable targets for model "
                    f"{model_id!r}"
                )
            sums[i] = row[present].sum()
        all_ranks[:, j] = _competition_ranks(sums)
    n_models = len(per_model)
    scores = n_models / (1.0 / all_ranks).sum(axis=1)
    order = np.argsort(scores, kind="stable")
    rows = tuple(
        RankingRow(
            source_id=source_order[i],
            ranks=tuple(int(r) for r in all_ranks[i]),
            score=float(scores[i]),
        )
        for i in order
    )
    return RankingTable(
        model_ids=tuple(model_id for model_id, _ in per_model), rows=rows
    )


@dataclass(frozen=True)
class CellStats:
    """One (source band, target band) cell of the length cross table."""

    mean_all: float | None
    mean_top: float | None
    n_pairs: int
    top_sources: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class LengthCrossTable:
    bands: tuple[LengthBand, ...]
    band_labels: tuple[str, ...]
    cells: dict[tuple[LengthBand, LengthBand], CellStats]
    target_band_top_sources: dict[LengthBand, tuple[tuple[str, float, float], ...]]


_TABLE_BANDS = (LengthBand.SHORT, LengthBand.MEDIUM, LengthBand.LONG)


def length_group_table(
    aggregate: AggregateMatrix,
    registry: TaskRegistry,
    in_domain: InDomainMap,
    bands: LengthBands = DEFAULT_BANDS,
    top_n: int = 5,
) -> LengthCrossTable:
    """Cross-tabulate normalized transfer by output-length band.

    Cell (s, t) averages all non-missing aggregate entries whose source
    falls in band s and target in band t, skipping in-domain pairs.
    ``mean_top`` restricts the average to the ``top_n`` sources with the
    highest within-cell mean (ties break on source id). Tasks without a
    band, or in the leftover ``other`` band, are excluded with one
    warning naming them. Each target band also gets an overall top-source
    list (mean over its entries from any source band, with the source's
    mean output length attached).
    """
    def band_for(task_id: str) -> LengthBand | None:
        meta = registry.get(task_id)
        if meta is None:
            return None
        return meta.length_band

    excluded: set[str] = set()

    def usable(task_id: str) -> LengthBand | None:
        band = band_for(task_id)
        if band is None or band is LengthBand.OTHER:
            excluded.add(task_id)
            return None
        return band

    # entry pools: per cell and per target band
    cell_entries: dict[tuple[LengthBand, LengthBand], dict[str, list[float]]] = {
        (s, t): {} for s in _TABLE_BANDS for t in _TABLE_BANDS
    }
    target_entries: dict[LengthBand, dict[str, list[float]]] = {
        t: {} for t in _TABLE_BANDS
    }
    for i, (_, source_id) in enumerate(aggregate.rows):
        s_band = usable(source_id)
        if s_band is None:
            continue
        for j, target_id in enumerate(aggregate.col_labels):
            if aggregate.missing[i, j]:
                continue
            if in_domain.is_in_domain(source_id, target_id):
                continue
            t_band = usable(target_id)
            if t_band is None:
                continue
            value = float(aggregate.values[i, j])
            cell_entries[(s_band, t_band)].setdefault(source_id, []).append(value)
            target_entries[t_band].setdefault(source_id, []).append(value)

    if excluded:
        warnings.warn(
            "tasks without a usable length band were excluded: "
            f"{sorted(excluded)}",
            RuntimeWarning,
            stacklevel=2,
        )

    cells: dict[tuple[LengthBand, LengthBand], CellStats] = {}
    for key, per_source in cell_entries.items():
        if not per_source:
            cells[key] = CellStats(None, None, 0, ())
            continue
        all_values = [v for vs in per_source.values() for v in vs]
        source_means = sorted(
            ((sid, float(np.mean(vs))) for sid, vs in per_source.items()),
            key=lambda item: (-item[1], item[0]),
        )
        top = source_means[:top_n]
        top_ids = {sid for sid, _ in top}
        top_values = [
            v for sid, vs in per_source.items() if sid in top_ids for v in vs
        ]
        cells[key] = CellStats(
            mean_all=float(np.mean(all_values)),
            mean_top=float(np.mean(top_values)),
            n_pairs=len(all_values),
            top_sources=tuple(top),
        )

    target_top: dict[LengthBand, tuple[tuple[str, float, float], ...]] = {}
    for t_band, per_source in target_entries.items():
        source_means = sorted(
            ((sid, float(np.mean(vs))) for sid, vs in per_source.items()),
            key=lambda item: (-item[1], item[0]),
        )
        rows = []
        for sid, mean in source_means[:top_n]:
            meta = registry.get(sid)
            length = float(meta.mean_output_length) if meta and meta.mean_output_length else float("nan")
            rows.append((sid, mean, length))
        target_top[t_band] = tuple(rows)

    return LengthCrossTable(
        bands=_TABLE_BANDS,
        band_labels=tuple(bands.label(b) for b in _TABLE_BANDS),
        cells=cells,
        target_band_top_sources=target_top,
    )


def word_entropy(counts: Mapping[str, float], natural: bool = False) -> float:
    """Shannon entropy of a word-frequency table, in bits by default.

    ``natural`` switches to nats. Zero counts are skipped; negative
    counts or an empty table are errors.
    """
    if not counts:
        raise NumericError("word_entropy needs at least one token")
    values = np.array([float(v) for v in counts.values()])
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise NumericError("token counts must be finite and non-negative")
    total = values.sum()
    if total <= 0:
        raise NumericError("token counts sum to zero")
    p = values[values > 0] / total
    if natural:
        return float(-(p * np.log(p)).sum())
    return float(-(p * np.log2(p)).sum())


def read_token_counts_text(path: str | Path, lowercase: bool = False) -> dict[str, int]:
    """Count whitespace-separated tokens in a plain text file."""
    text = Path(path).read_text(encoding="utf-8")
    counts: dict[str, int] = {}
    for token in text.split():
        if lowercase:
            token = token.lower()
        counts[token] = counts.get(token, 0) + 1
    if not counts:
        raise DataFormatError(f"{path}: no tokens found")
    return counts


def read_token_counts_csv(path: str | Path) -> dict[str, float]:
    """Read a two-column ``word,count`` CSV (header optional)."""
    path = Path(path)
    counts: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise DataFormatError(f"{path}: row {r} needs exactly 2 cells")
            word, raw = row[0].strip(), row[1].strip()
            if r == 1 and raw and not _is_number(raw):
                continue  # header row
            try:
                value = float(raw)
            except ValueError:
                raise DataFormatError(
                    f"{path}: row {r} has non-numeric count {raw!r}"
                ) from None
            if word in counts:
                raise DataFormatError(f"{path}: duplicate word {word!r}")
            counts[word] = value
    if not counts:
        raise DataFormatError(f"{path}: no counts found")
    return counts


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def generalized_variance(features: np.ndarray, top_k: int) -> float:
    """Product of the ``top_k`` largest eigenvalues of the sample covariance.

    Uses ddof=1. Needs at least two rows and ``1 <= top_k <= n_columns``.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise NumericError("generalized_variance expects a 2-d array")
    n, d = X.shape
    if n < 2:
        raise NumericError("generalized_variance needs at least two rows")
    if not 1 <= top_k <= d:
        raise NumericError(f"top_k must be in [1, {d}], got {top_k}")
    if not np.all(np.isfinite(X)):
        raise NumericError("generalized_variance input must be finite")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    values = sym_eig(cov).values
    return float(np.prod(values[:top_k]))
