"""Shared helpers for building numerically exact test fixtures."""

import numpy as np

from taskfactor.data_model import LabeledMatrix


def pytest_terminal_summary(terminalreporter):
    """Print one PASS/FAIL line per acceptance criterion."""
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            if outcome == "passed" and rep.when != "call":
                continue
            name = nodeid.rsplit("::", 1)[-1]
            status = "PASS" if outcome == "passed" else "FAIL"
            if rows.get(name) != "FAIL":
                rows[name] = status
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name in sorted(rows):
            parts = name.split("_")
            label = f"{int(parts[1])}. {' '.join(parts[2:])}"
            terminalreporter.write_line(f"{rows[name]}  {label}")


def data_with_exact_correlation(R: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Draw an n-row data matrix whose sample correlation is exactly ``R``.

    Random normals are centered, orthonormalized (QR keeps column means
    at zero), rescaled to unit sample variance, then colored by the
    Cholesky factor of ``R``. Sample means are 0, sample standard
    deviations 1, and the sample correlation equals ``R`` to machine
    precision.
    """
    R = np.asarray(R, dtype=float)
    k = R.shape[0]
    if n <= k:
        raise ValueError("need more rows than columns")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, k))
    G -= G.mean(axis=0)
    Q, _ = np.linalg.qr(G)
    Z = Q * np.sqrt(n - 1)
    L = np.linalg.cholesky(R)
    return Z @ L.T


def labeled_from(values: np.ndarray, prefix: str = "t") -> LabeledMatrix:
    """Wrap a complete array in a LabeledMatrix with generated ids."""
    values = np.asarray(values, dtype=float)
    n, k = values.shape
    return LabeledMatrix.complete(
        tuple(f"row{i}" for i in range(n)),
        tuple(f"{prefix}{j}" for j in range(k)),
        values,
    )


def procrustes_rotation(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Orthogonal matrix minimizing ||A @ R - B|| in Frobenius norm."""
    u, _, vt = np.linalg.svd(A.T @ B)
    return u @ vt
