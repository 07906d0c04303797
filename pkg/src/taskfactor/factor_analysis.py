"""Exploratory factor analysis of the aggregate performance matrix.

Targets are the variables, model x source rows the observations. Fitting
uses principal-axis factoring on the correlation matrix: communalities
start at squared multiple correlations and are refined by iterated
eigendecomposition of the reduced correlation matrix. Rotation is
varimax with Kaiser row normalization. Factor scores follow Thomson's
regression estimator, ``Z R^{-1} Lambda``.

The module also carries the factor-count heuristics (Horn's parallel
analysis and Velicer's minimum-average-partial test), the dominant-factor
residualization step, and the leave-one-model-out reconstruction check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data_model import LabeledMatrix
from .errors import NumericError, ValidationFailure
from .normalization import AggregateMatrix
from .numkernels import correlation_matrix, sym_eig

PSI_FLOOR = 1e-6
EFA_TOL = 1e-6
EFA_MAX_ITER = 200
VARIMAX_TOL = 1e-8
VARIMAX_MAX_SWEEPS = 1000
SCORE_RIDGE = 1e-8
MAP_DIAG_EPS = 1e-10
DOMINANT_VAR_EPS = 1e-12

__all__ = [
    "EfaModel",
    "ResidualResult",
    "ParallelAnalysisResult",
    "MapResult",
    "FactorCountReport",
    "LoadingEntry",
    "SignificantLoadings",
    "RobustnessResult",
    "fit_efa",
    "varimax_criterion",
    "varimax_rotate",
    "factor_scores",
    "communalities",
    "parallel_analysis",
    "velicer_map",
    "factor_count_report",
    "resolve_factor_count",
    "residualize_dominant",
    "significant_loadings",
    "reconstruct_rows",
    "loo_robustness",
]


@dataclass(frozen=True)
class EfaModel:
    """A fitted common-factor model on standardized variables.

    ``loadings`` are on the correlation (standardized) scale; ``mean``
    and ``scale`` record the per-target statistics used to standardize,
    so the model can score new rows given on the raw scale. ``corr`` is
    the sample correlation matrix of the fit data, kept for Thomson
    scoring.
    """

    target_ids: tuple[str, ...]
    loadings: np.ndarray
    uniquenesses: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    n_obs: int
    method: str
    corr: np.ndarray
    converged: bool
    n_iter: int
    rotation: str | None = None

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]


@dataclass(frozen=True)
class ResidualResult:
    """Dominant-factor regression and what is left after removing it."""

    w: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    residuals: LabeledMatrix
    model: EfaModel


@dataclass(frozen=True)
class ParallelAnalysisResult:
    sample_eigenvalues: np.ndarray
    thresholds: np.ndarray
    retained: int
    replications: int
    percentile: float
    seed: int


@dataclass(frozen=True)
class MapResult:
    criteria: np.ndarray
    valid: np.ndarray
    retained: int


@dataclass(frozen=True)
class FactorCountReport:
    parallel: ParallelAnalysisResult
    map: MapResult


@dataclass(frozen=True)
class LoadingEntry:
    task_id: str
    factor: int  # 1-based
    loading: float
    dominant: bool


@dataclass(frozen=True)
class SignificantLoadings:
    cutoff: float
    entries: tuple[LoadingEntry, ...]
    unexplained: tuple[str, ...]


@dataclass(frozen=True)
class RobustnessResult:
    held_out_model: str
    train_models: tuple[str, ...]
    test_rows: tuple[tuple[str, str], ...]
    scores: np.ndarray
    error_l2: float


def _require_complete(matrix: LabeledMatrix, what: str) -> None:
    if matrix.missing.any():
        raise NumericError(
            f"{what} requires a complete matrix; "
            f"{int(matrix.missing.sum())} cells are missing"
        )


def _smc(R: np.ndarray) -> np.ndarray:
    """Squared multiple correlations, 1 - 1/diag(R^-1)."""
    try:
        inv_diag = np.diag(np.linalg.inv(R))
    except np.linalg.LinAlgError:
        warnings.warn(
            "singular correlation matrix; using pseudoinverse for initial "
            "communalities",
            RuntimeWarning,
            stacklevel=3,
        )
        inv_diag = np.diag(np.linalg.pinv(R))
    with np.errstate(divide="ignore"):
        smc = 1.0 - 1.0 / inv_diag
    return np.clip(smc, 0.0, 1.0 - PSI_FLOOR)


def fit_efa(
    matrix: LabeledMatrix,
    n_factors: int,
    max_iter: int = EFA_MAX_ITER,
    tol: float = EFA_TOL,
) -> EfaModel:
    """Fit a principal-axis factor model to the columns of ``matrix``.

    Parameters
    ----------
    matrix : LabeledMatrix
        Complete matrix, observations in rows, targets in columns.
    n_factors : int
        Number of common factors, ``1 <= n_factors < n_targets``; the
        data must supply at least ``n_factors + 1`` rows.
    max_iter, tol : int, float
        The communality iteration stops when the largest absolute
        communality change drops below ``tol``; hitting ``max_iter``
        first returns an unconverged model with a warning.

    Returns
    -------
    EfaModel
        Unrotated loadings ordered by descending eigenvalue, each column
        sign-fixed (largest-magnitude loading non-negative).

    Raises
    ------
    NumericError
        On missing cells, bad ``n_factors``, too few rows, or a constant
        column.
    """
    _require_complete(matrix, "fit_efa")
    X = matrix.values
    n, k = X.shape
    if not 1 <= n_factors < k:
        raise NumericError(
            f"n_factors must be in [1, {k - 1}] for {k} targets, got {n_factors}"
        )
    if n < n_factors + 1:
        raise NumericError(
            f"fit_efa needs at least n_factors + 1 = {n_factors + 1} rows, got {n}"
        )
    labels = list(matrix.col_labels)
    R = correlation_matrix(X, labels)
    mean = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1)

    h2 = _smc(R)
    reduced = R.copy()
    converged = False
    n_iter = 0
    loadings = np.zeros((k, n_factors))
    heywood = False
    for n_iter in range(1, max_iter + 1):
        np.fill_diagonal(reduced, h2)
        eig = sym_eig(reduced)
        vals = np.clip(eig.values[:n_factors], 0.0, None)
        loadings = eig.vectors[:, :n_factors] * np.sqrt(vals)
        h2_new = (loadings**2).sum(axis=1)
        if np.any(h2_new > 1.0 - PSI_FLOOR):
            heywood = True
            h2_new = np.minimum(h2_new, 1.0 - PSI_FLOOR)
        delta = float(np.max(np.abs(h2_new - h2)))
        h2 = h2_new
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"factor extraction did not converge in {max_iter} iterations",
            RuntimeWarning,
            stacklevel=2,
        )
    psi = 1.0 - (loadings**2).sum(axis=1)
    if heywood or np.any(psi < PSI_FLOOR):
        bad = [labels[i] for i in np.flatnonzero(psi < PSI_FLOOR)]
        warnings.warn(
            f"Heywood case: uniqueness clamped to {PSI_FLOOR:g} for {bad}",
            RuntimeWarning,
            stacklevel=2,
        )
        psi = np.clip(psi, PSI_FLOOR, None)
    return EfaModel(
        target_ids=matrix.col_labels,
        loadings=loadings,
        uniquenesses=psi,
        mean=mean,
        scale=scale,
        n_obs=n,
        method="paf",
        corr=R,
        converged=converged,
        n_iter=n_iter,
    )


def varimax_criterion(loadings: np.ndarray) -> float:
    """Sum over factors of the variance of squared loadings."""
    B2 = np.asarray(loadings, dtype=float) ** 2
    return float((B2**2).mean(axis=0).sum() - (B2.mean(axis=0) ** 2).sum())


def varimax_rotate(model: EfaModel) -> tuple[EfaModel, np.ndarray]:
    """Varimax rotation with Kaiser row normalization.

    Returns the rotated model and the orthogonal matrix ``R`` with
    ``rotated.loadings == model.loadings @ R`` (exactly, by construction:
    row scaling commutes with column rotation). Columns are sign-fixed
    (largest-magnitude loading non-negative) and ordered by descending
    sum of squared loadings; both fixes are folded into ``R``.

    The pairwise sweeps stop when the criterion improves by less than
    ``VARIMAX_TOL`` or after ``VARIMAX_MAX_SWEEPS`` sweeps.
    """
    lam = model.loadings
    k, L = lam.shape
    if L == 1:
        return replace(model, rotation="varimax"), np.eye(1)
    norms = np.sqrt((lam**2).sum(axis=1))
    safe = np.where(norms > 1e-12, norms, 1.0)
    B = lam / safe[:, None]
    R = np.eye(L)
    prev_crit = varimax_criterion(B)
    for _sweep in range(VARIMAX_MAX_SWEEPS):
        for p in range(L - 1):
            for q in range(p + 1, L):
                x = B[:, p]
                y = B[:, q]
                u = x * x - y * y
                v = 2.0 * x * y
                a = u.sum()
                b = v.sum()
                c = (u * u - v * v).sum()
                d = (2.0 * u * v).sum()
                num = d - 2.0 * a * b / k
                den = c - (a * a - b * b) / k
                phi = 0.25 * np.arctan2(num, den)
                if abs(phi) < 1e-14:
                    continue
                cos, sin = np.cos(phi), np.sin(phi)
                giv = np.array([[cos, -sin], [sin, cos]])
                B[:, [p, q]] = B[:, [p, q]] @ giv
                R[:, [p, q]] = R[:, [p, q]] @ giv
        crit = varimax_criterion(B)
        if crit - prev_crit < VARIMAX_TOL:
            break
        prev_crit = crit
    rotated = lam @ R
    idx = np.argmax(np.abs(rotated), axis=0)
    signs = np.where(rotated[idx, np.arange(L)] < 0.0, -1.0, 1.0)
    rotated = rotated * signs
    R = R * signs
    order = np.argsort(-(rotated**2).sum(axis=0), kind="stable")
    rotated = rotated[:, order]
    R = R[:, order]
    out = replace(model, loadings=rotated, rotation="varimax")
    return out, R


def factor_scores(model: EfaModel, matrix: LabeledMatrix) -> np.ndarray:
    """Thomson regression factor scores for rows given on the raw scale.

    Standardizes ``matrix`` with the model's fit-time mean and scale and
    applies ``Z @ R^{-1} @ Lambda``. A singular or numerically hopeless
    correlation matrix falls back to a small ridge on the diagonal, with
    a warning.
    """
    _require_complete(matrix, "factor_scores")
    if matrix.col_labels != model.target_ids:
        raise NumericError("matrix columns do not match the fitted model targets")
    Z = (matrix.values - model.mean) / model.scale
    R = model.corr
    use_ridge = False
    try:
        if np.linalg.cond(R) > 1.0 / SCORE_RIDGE:
            use_ridge = True
    except np.linalg.LinAlgError:
        use_ridge = True
    if use_ridge:
        warnings.warn(
            "near-singular correlation matrix; scoring with ridge "
            f"{SCORE_RIDGE:g} on the diagonal",
            RuntimeWarning,
            stacklevel=2,
        )
        R = R + SCORE_RIDGE * np.eye(R.shape[0])
    weights = np.linalg.solve(R, model.loadings)
    return Z @ weights


def communalities(model: EfaModel) -> np.ndarray:
    """Per-target explained variance share, row sums of squared loadings."""
    return (model.loadings**2).sum(axis=1)


def parallel_analysis(
    matrix: LabeledMatrix,
    replications: int = 100,
    percentile: float = 95.0,
    seed: int = 0,
) -> ParallelAnalysisResult:
    """Horn's parallel analysis against standard-normal data.

    Each replication draws an ``n x k`` standard-normal matrix from an
    independently spawned child of ``seed`` (so the count of
    replications, not their scheduling, determines the streams), and the
    per-rank ``percentile`` of the replicated eigenvalues becomes the
    retention threshold. Retained factors are the leading sample
    eigenvalues strictly above their thresholds, stopping at the first
    failure.
    """
    _require_complete(matrix, "parallel_analysis")
    if replications < 1:
        raise NumericError("parallel_analysis needs at least one replication")
    if not 0.0 < percentile < 100.0:
        raise NumericError("percentile must be strictly between 0 and 100")
    X = matrix.values
    n, k = X.shape
    if k < 2:
        raise NumericError("parallel_analysis needs at least two columns")
    sample = sym_eig(correlation_matrix(X, list(matrix.col_labels))).values
    children = np.random.SeedSequence(seed).spawn(replications)
    eigs = np.empty((replications, k))
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        noise = rng.standard_normal((n, k))
        eigs[i] = sym_eig(correlation_matrix(noise)).values
    thresholds = np.percentile(eigs, percentile, axis=0)
    retained = 0
    for i in range(k):
        if sample[i] > thresholds[i]:
            retained += 1
        else:
            break
    return ParallelAnalysisResult(
        sample_eigenvalues=sample,
        thresholds=thresholds,
        retained=retained,
        replications=replications,
        percentile=percentile,
        seed=seed,
    )


def velicer_map(matrix: LabeledMatrix) -> MapResult:
    """Velicer's minimum-average-partial test.

    For each candidate count m the first m principal components of the
    correlation matrix are partialled out and the mean squared
    off-diagonal partial correlation recorded; the retained count is the
    m minimizing that curve (m = 0 means the plain correlation matrix).
    Steps whose partialled diagonal collapses are skipped with a warning.
    """
    _require_complete(matrix, "velicer_map")
    X = matrix.values
    n, k = X.shape
    if k < 2:
        raise NumericError("velicer_map needs at least two columns")
    R = correlation_matrix(X, list(matrix.col_labels))
    eig = sym_eig(R)
    off = ~np.eye(k, dtype=bool)
    criteria = np.full(k - 1, np.nan)
    valid = np.zeros(k - 1, dtype=bool)
    for m in range(k - 1):
        if m == 0:
            partial = R
        else:
            vals = np.clip(eig.values[:m], 0.0, None)
            lam = eig.vectors[:, :m] * np.sqrt(vals)
            star = R - lam @ lam.T
            d = np.diag(star).copy()
            if np.any(d <= MAP_DIAG_EPS):
                warnings.warn(
                    f"MAP step m={m}: partialled diagonal collapsed; skipped",
                    RuntimeWarning,
                    stacklevel=2,
                )
                continue
            partial = star / np.sqrt(np.outer(d, d))
        criteria[m] = float((partial[off] ** 2).mean())
        valid[m] = True
    if not valid.any():
        raise NumericError("all MAP steps were invalid")
    retained = int(np.argmin(np.where(valid, criteria, np.inf)))
    return MapResult(criteria=criteria, valid=valid, retained=retained)


def factor_count_report(
    matrix: LabeledMatrix,
    replications: int = 100,
    percentile: float = 95.0,
    seed: int = 0,
) -> FactorCountReport:
    """Run both factor-count heuristics on the same matrix."""
    return FactorCountReport(
        parallel=parallel_analysis(matrix, replications, percentile, seed),
        map=velicer_map(matrix),
    )


def resolve_factor_count(report: FactorCountReport, strict: bool = True) -> int:
    """Turn the two heuristics into one factor count.

    Agreement returns the common value. Disagreement raises
    :class:`ValidationFailure` when ``strict``, otherwise warns and
    returns the smaller count.
    """
    pa = report.parallel.retained
    mp = report.map.retained
    if pa == mp:
        return pa
    if strict:
        raise ValidationFailure(
            f"factor-count heuristics disagree (parallel analysis {pa}, "
            f"MAP {mp}); pass an explicit factor count"
        )
    warnings.warn(
        f"factor-count heuristics disagree (parallel analysis {pa}, MAP {mp}); "
        f"using the smaller count {min(pa, mp)}",
        RuntimeWarning,
        stacklevel=2,
    )
    return min(pa, mp)


def residualize_dominant(matrix: LabeledMatrix) -> ResidualResult:
    """Remove the dominant shared factor by per-column regression.

    Fits a one-factor model, scores every row (``w``), then regresses
    each target column on ``w`` with an intercept and keeps the
    residuals: ``A - w beta^T - 1 gamma^T``.

    Because ``w`` is itself a linear functional of the columns, the
    residual columns always satisfy exactly one affine dependence, so
    their correlation matrix is singular by construction. Downstream
    consumers handle this through their pseudo-inverse and ridge
    fallbacks.

    Raises
    ------
    NumericError
        If the dominant scores are (near-)constant, their variance below
        ``DOMINANT_VAR_EPS``.
    """
    model = fit_efa(matrix, 1)
    w = factor_scores(model, matrix)[:, 0]
    if float(np.var(w)) < DOMINANT_VAR_EPS:
        raise NumericError(
            "dominant factor scores are numerically constant; "
            "cannot residualize"
        )
    design = np.column_stack([w, np.ones_like(w)])
    coef, _, _, _ = np.linalg.lstsq(design, matrix.values, rcond=None)
    beta = coef[0]
    gamma = coef[1]
    residual_values = matrix.values - np.outer(w, beta) - gamma[None, :]
    residuals = LabeledMatrix.complete(
        matrix.row_labels, matrix.col_labels, residual_values
    )
    return ResidualResult(w=w, beta=beta, gamma=gamma, residuals=residuals, model=model)


def significant_loadings(
    model: EfaModel, cutoff: float, include_secondary: bool = False
) -> SignificantLoadings:
    """List loadings at or above ``cutoff`` in magnitude.

    Every target's dominant factor is the one with the largest absolute
    loading; the dominant loading appears whenever it clears the cutoff.
    With ``include_secondary`` other factors clearing the cutoff appear
    too, flagged non-dominant. Targets with nothing above the cutoff are
    collected as unexplained. Factor indices are 1-based.
    """
    if not 0.0 < cutoff < 1.0:
        raise NumericError(f"cutoff must be in (0, 1), got {cutoff}")
    lam = model.loadings
    entries: list[LoadingEntry] = []
    unexplained: list[str] = []
    for i, task_id in enumerate(model.target_ids):
        row = lam[i]
        dom = int(np.argmax(np.abs(row)))
        any_entry = False
        for j in range(lam.shape[1]):
            if abs(row[j]) < cutoff:
                continue
            if j != dom and not include_secondary:
                continue
            entries.append(
                LoadingEntry(
                    task_id=task_id,
                    factor=j + 1,
                    loading=float(row[j]),
                    dominant=(j == dom),
                )
            )
            any_entry = True
        if not any_entry:
            unexplained.append(task_id)
    entries.sort(key=lambda e: (e.factor, -abs(e.loading), e.task_id))
    return SignificantLoadings(
        cutoff=cutoff, entries=tuple(entries), unexplained=tuple(unexplained)
    )


def reconstruct_rows(
    loadings_raw: np.ndarray, mean: np.ndarray, rows: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares factor scores and residuals for raw-scale rows.

    Solves ``min_w || row - mean - loadings_raw @ w ||`` independently
    per row. ``loadings_raw`` is the loading matrix brought back to the
    raw scale (standardized loadings times the per-target scale).

    Returns
    -------
    (scores, residuals)
        ``scores`` has one row of factor coordinates per input row;
        ``residuals`` is ``rows - mean - scores @ loadings_raw.T``.
    """
    H = np.asarray(loadings_raw, dtype=float)
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != H.shape[0]:
        raise NumericError(
            f"row width {rows.shape[1]} does not match loadings {H.shape}"
        )
    demeaned = rows - mean
    sol, _, rank, _ = np.linalg.lstsq(H, demeaned.T, rcond=None)
    if rank < H.shape[1]:
        warnings.warn(
            "rank-deficient loading matrix; minimum-norm scores",
            RuntimeWarning,
            stacklevel=2,
        )
    scores = sol.T
    residuals = demeaned - scores @ H.T
    return scores, residuals


def loo_robustness(
    aggregate: AggregateMatrix, held_out: str, n_factors: int = 6
) -> RobustnessResult:
    """Hold out one model, refit on the rest, reconstruct the held-out rows.

    The training rows go through the full pipeline (dominant-factor
    residualization, then an ``n_factors`` varimax-rotated fit). The
    held-out rows are residualized with the training regression (their
    dominant scores come from the training one-factor model) and
    projected onto the training factor span; ``error_l2`` is the
    Frobenius norm of what remains. The error is zero exactly when every
    held-out residual row lies in the affine span of the training
    factors.
    """
    model_ids = aggregate.model_ids
    if held_out not in model_ids:
        raise NumericError(f"held-out model {held_out!r} not present in aggregate")
    if aggregate.missing.any():
        raise NumericError("loo_robustness requires a complete aggregate matrix")
    test_mask = np.array([m == held_out for m, _ in aggregate.rows])
    train_rows = tuple(
        f"{m}::{s}" for (m, s), t in zip(aggregate.rows, test_mask) if not t
    )
    test_pairs = tuple(
        (m, s) for (m, s), t in zip(aggregate.rows, test_mask) if t
    )
    train = LabeledMatrix.complete(
        train_rows, aggregate.col_labels, aggregate.values[~test_mask]
    )
    test_values = aggregate.values[test_mask]
    if len(train_rows) < n_factors + 1:
        raise NumericError(
            f"training partition has {len(train_rows)} rows; "
            f"needs at least {n_factors + 1}"
        )
    rr = residualize_dominant(train)
    efa = fit_efa(rr.residuals, n_factors)
    rotated, _ = varimax_rotate(efa)

    test = LabeledMatrix.complete(
        tuple(f"{m}::{s}" for m, s in test_pairs),
        aggregate.col_labels,
        test_values,
    )
    w_test = factor_scores(rr.model, test)[:, 0]
    test_resid = test_values - np.outer(w_test, rr.beta) - rr.gamma[None, :]
    loadings_raw = rotated.loadings * rotated.scale[:, None]
    scores, eps = reconstruct_rows(loadings_raw, rotated.mean, test_resid)
    return RobustnessResult(
        held_out_model=held_out,
        train_models=tuple(m for m in model_ids if m != held_out),
        test_rows=test_pairs,
        scores=scores,
        error_l2=float(np.linalg.norm(eps)),
    )
