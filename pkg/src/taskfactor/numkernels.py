"""Deterministic linear-algebra kernels used by the analysis modules.

Thin wrappers around numpy.linalg that pin down the conventions every
caller in this package relies on:

* spectra are returned in descending order,
* each eigenvector / right singular vector is sign-fixed so that its
  largest-magnitude component is non-negative (first index wins ties),
* symmetry and finiteness preconditions raise :class:`NumericError`
  instead of silently producing garbage.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericError

__all__ = [
    "EigenResult",
    "SvdResult",
    "OlsResult",
    "sym_eig",
    "truncated_svd",
    "correlation_matrix",
    "ols",
]


@dataclass(frozen=True)
class EigenResult:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Attributes
    ----------
    values : ndarray, shape (n,)
        Eigenvalues sorted from largest to smallest.
    vectors : ndarray, shape (n, n)
        Column ``vectors[:, i]`` is the unit eigenvector for ``values[i]``,
        sign-fixed so its largest-magnitude entry is non-negative.
    """

    values: np.ndarray
    vectors: np.ndarray


@dataclass(frozen=True)
class SvdResult:
    """Truncated singular value decomposition ``M ~ u @ diag(s) @ v.T``.

    ``v`` holds right singular vectors as columns, sign-fixed like
    eigenvectors; ``u`` columns are flipped together with them so the
    product is unchanged.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class OlsResult:
    """Least-squares fit of ``y`` on the columns of a design matrix."""

    coef: np.ndarray
    intercept: float
    fitted: np.ndarray
    residuals: np.ndarray
    rank: int


def _require_finite(M: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(M)):
        raise NumericError(f"{what} contains non-finite entries")


def _fix_vector_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip column signs so each column's largest-|entry| is non-negative.

    Ties on magnitude resolve to the first (lowest) index, which is what
    ``np.argmax`` does on its own.
    """
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    picked = vectors[idx, np.arange(vectors.shape[1])]
    signs = np.where(picked < 0.0, -1.0, 1.0)
    return vectors * signs


def sym_eig(M: np.ndarray, sym_tol: float = 1e-8) -> EigenResult:
    """Eigendecompose a symmetric matrix with deterministic conventions.

    Parameters
    ----------
    M : ndarray, shape (n, n)
        Matrix to decompose. Must be square, finite, and symmetric within
        ``sym_tol`` (scaled by the largest magnitude in ``M``).
    sym_tol : float
        Relative asymmetry tolerance.

    Returns
    -------
    EigenResult
        Eigenvalues descending, sign-fixed eigenvectors as columns.

    Raises
    ------
    NumericError
        If ``M`` is not square, not finite, or asymmetric beyond tolerance.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NumericError(f"sym_eig expects a square matrix, got shape {M.shape}")
    _require_finite(M, "sym_eig input")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asym > sym_tol * scale:
        raise NumericError(
            f"matrix is asymmetric beyond tolerance (max |M - M.T| = {asym:.3e})"
        )
    # Symmetrize so LAPACK sees an exactly symmetric input; keeps reruns
    # bit-identical regardless of which triangle carried the rounding.
    sym = (M + M.T) / 2.0
    values, vectors = np.linalg.eigh(sym)
    order = np.argsort(values)[::-1]
    values = values[order]
    vectors = _fix_vector_signs(vectors[:, order])
    return EigenResult(values=values, vectors=vectors)


def truncated_svd(M: np.ndarray, rank: int) -> SvdResult:
    """Rank-``rank`` truncated SVD with the package sign convention.

    Parameters
    ----------
    M : ndarray, shape (n, k)
    rank : int
        Number of leading singular triplets to keep; must satisfy
        ``1 <= rank <= min(n, k)``.

    Raises
    ------
    NumericError
        On non-finite input or an out-of-range ``rank``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise NumericError(f"truncated_svd expects a 2-d array, got shape {M.shape}")
    _require_finite(M, "truncated_svd input")
    limit = min(M.shape)
    if not 1 <= rank <= limit:
        raise NumericError(
            f"rank {rank} out of range for shape {M.shape} (must be 1..{limit})"
        )
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    u = u[:, :rank]
    s = s[:rank]
    v = vt[:rank].T
    idx = np.argmax(np.abs(v), axis=0)
    picked = v[idx, np.arange(v.shape[1])]
    signs = np.where(picked < 0.0, -1.0, 1.0)
    return SvdResult(u=u * signs, s=s, v=v * signs)


def correlation_matrix(X: np.ndarray, labels: list[str] | None = None) -> np.ndarray:
    """Pearson correlation matrix of the columns of ``X``.

    Parameters
    ----------
    X : ndarray, shape (n, k)
        Data with observations in rows. Needs at least two rows, finite
        values, and no constant column.
    labels : list of str, optional
        Column names used in error messages.

    Returns
    -------
    ndarray, shape (k, k)
        Exactly symmetric, unit diagonal, off-diagonals clipped to [-1, 1].

    Raises
    ------
    NumericError
        If ``n < 2``, input is non-finite, or a column is constant (the
        message names the offending column).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise NumericError(f"correlation_matrix expects a 2-d array, got {X.shape}")
    n, k = X.shape
    if n < 2:
        raise NumericError("correlation_matrix needs at least 2 observations")
    _require_finite(X, "correlation_matrix input")
    centered = X - X.mean(axis=0)
    ss = np.sqrt((centered**2).sum(axis=0))
    bad = np.flatnonzero(ss == 0.0)
    if bad.size:
        j = int(bad[0])
        name = labels[j] if labels is not None else f"column {j}"
        raise NumericError(f"constant column: {name} has zero variance")
    Z = centered / ss
    R = Z.T @ Z
    R = (R + R.T) / 2.0
    np.clip(R, -1.0, 1.0, out=R)
    np.fill_diagonal(R, 1.0)
    return R


def ols(
    X: np.ndarray,
    y: np.ndarray,
    intercept: bool = False,
) -> OlsResult:
    """Ordinary least squares of ``y`` on the columns of ``X``.

    Parameters
    ----------
    X : ndarray, shape (n, p)
    y : ndarray, shape (n,)
    intercept : bool
        When true a constant column is appended to the design and its
        coefficient reported separately as ``intercept``.

    Returns
    -------
    OlsResult
        ``coef`` has length p; ``intercept`` is 0.0 when not requested.

    Raises
    ------
    NumericError
        On shape mismatch, non-finite input, or fewer rows than design
        columns.

    Notes
    -----
    A rank-deficient design is solved anyway (minimum-norm solution) with
    a warning, matching numpy.linalg.lstsq behaviour.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise NumericError(f"ols design must be 2-d, got shape {X.shape}")
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise NumericError(
            f"ols response shape {y.shape} does not match design {X.shape}"
        )
    _require_finite(X, "ols design")
    _require_finite(y, "ols response")
    design = X
    if intercept:
        design = np.hstack([X, np.ones((X.shape[0], 1))])
    n, p = design.shape
    if n < p:
        raise NumericError(f"ols needs at least as many rows ({n}) as columns ({p})")
    beta, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < p:
        warnings.warn(
            f"rank-deficient design (rank {rank} < {p}); minimum-norm solution",
            RuntimeWarning,
            stacklevel=2,
        )
    fitted = design @ beta
    residuals = y - fitted
    if intercept:
        return OlsResult(
            coef=beta[:-1],
            intercept=float(beta[-1]),
            fitted=fitted,
            residuals=residuals,
            rank=int(rank),
        )
    return OlsResult(
        coef=beta,
        intercept=0.0,
        fitted=fitted,
        residuals=residuals,
        rank=int(rank),
    )
