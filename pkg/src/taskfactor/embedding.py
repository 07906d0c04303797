"""Low-rank task embeddings from the aggregate matrix.

Targets become points in a small latent space: a truncated SVD of the
aggregate (rows = model x source observations, columns = targets) gives
``A ~ U S V^T``, and each target's feature vector is its row of
``V sqrt(S)``. Cosine similarity between those vectors measures how
similarly two targets respond across all sources and models.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data_model import LabeledMatrix
from .errors import NumericError
from .normalization import AggregateMatrix
from .numkernels import truncated_svd

ZERO_NORM_EPS = 1e-12

__all__ = [
    "TaskFeatures",
    "svd_task_features",
    "cosine_similarity",
    "mean_similarity_ranking",
]


@dataclass(frozen=True)
class TaskFeatures:
    """Per-target latent coordinates, one row per task, one column per
    latent dimension (strongest first)."""

    task_ids: tuple[str, ...]
    features: np.ndarray

    def __post_init__(self) -> None:
        if len(self.task_ids) != self.features.shape[0]:
            raise NumericError("feature rows do not match task ids")

    @property
    def rank(self) -> int:
        return self.features.shape[1]


def svd_task_features(
    matrix: AggregateMatrix | LabeledMatrix,
    rank: int = 8,
    center: bool = False,
) -> TaskFeatures:
    """Embed target columns via truncated SVD.

    Parameters
    ----------
    matrix : AggregateMatrix or LabeledMatrix
        Complete matrix (no missing cells) with targets in columns.
    rank : int
        Number of latent dimensions, ``1 <= rank <= min(shape)``.
    center : bool
        Subtract column means before the decomposition.

    Returns
    -------
    TaskFeatures
        Row ``j`` is target ``j`` at coordinates ``V[j] * sqrt(s)``.

    Notes
    -----
    Given a fixed-rank decomposition, the first D' columns for a smaller
    rank D' equal the first D' columns here (same sign convention), so
    truncation is consistent across ranks.
    """
    if matrix.missing.any():
        raise NumericError(
            f"embedding input has {int(matrix.missing.sum())} missing cells; "
            "complete matrix required"
        )
    values = matrix.values
    if center:
        values = values - values.mean(axis=0)
    svd = truncated_svd(values, rank)
    features = svd.v * np.sqrt(svd.s)
    return TaskFeatures(task_ids=tuple(matrix.col_labels), features=features)


def cosine_similarity(features: TaskFeatures) -> LabeledMatrix:
    """Pairwise cosine similarity between task feature rows.

    Output is symmetric with an exactly unit diagonal. A task whose
    feature vector has near-zero norm gets a fully missing row and column
    (its direction is undefined) plus a warning; its diagonal stays 1.
    """
    X = features.features
    k = X.shape[0]
    if k < 1:
        raise NumericError("cosine_similarity needs at least one task")
    norms = np.sqrt((X**2).sum(axis=1))
    degenerate = norms < ZERO_NORM_EPS
    if degenerate.any():
        names = [features.task_ids[i] for i in np.flatnonzero(degenerate)]
        warnings.warn(
            f"zero-norm feature rows marked missing in similarity: {names}",
            RuntimeWarning,
            stacklevel=2,
        )
    safe = np.where(degenerate, 1.0, norms)
    unit = X / safe[:, None]
    S = unit @ unit.T
    S = (S + S.T) / 2.0
    np.clip(S, -1.0, 1.0, out=S)
    missing = np.zeros((k, k), dtype=bool)
    missing[degenerate, :] = True
    missing[:, degenerate] = True
    np.fill_diagonal(missing, False)
    S[missing] = np.nan
    np.fill_diagonal(S, 1.0)
    return LabeledMatrix(
        row_labels=features.task_ids,
        col_labels=features.task_ids,
        values=S,
        missing=missing,
    )


def mean_similarity_ranking(
    similarity: LabeledMatrix,
) -> list[tuple[str, float]]:
    """Rank tasks by mean off-diagonal similarity, most typical first.

    Missing cells are skipped; ties break on task id so the order is
    deterministic.
    """
    if similarity.row_labels != similarity.col_labels:
        raise NumericError("similarity matrix must be square with matching labels")
    k = len(similarity.row_labels)
    if k < 2:
        raise NumericError("mean similarity needs at least two tasks")
    values = similarity.values
    present = ~similarity.missing
    sym_ok = np.allclose(
        np.where(present, values, 0.0),
        np.where(present, values, 0.0).T,
        atol=1e-8,
    ) and np.array_equal(present, present.T)
    if not sym_ok:
        raise NumericError("similarity matrix is not symmetric")
    if not np.allclose(np.diag(values), 1.0, atol=1e-8):
        raise NumericError("similarity matrix diagonal must be 1")
    results: list[tuple[str, float]] = []
    for i, task_id in enumerate(similarity.row_labels):
        mask = present[i].copy()
        mask[i] = False
        if not mask.any():
            raise NumericError(
                f"task {task_id!r} has no off-diagonal similarities"
            )
        results.append((task_id, float(values[i, mask].mean())))
    results.sort(key=lambda item: (-item[1], item[0]))
    return results
