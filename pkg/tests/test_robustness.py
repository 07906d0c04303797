"""Leave-one-model-out reconstruction and the row projection seam."""

import numpy as np
import pytest

from taskfactor.errors import NumericError
from taskfactor.factor_analysis import loo_robustness, reconstruct_rows
from taskfactor.normalization import AggregateMatrix


def test_reconstruct_rows_in_span_is_exact() -> None:
    rng = np.random.default_rng(60)
    k, L, n = 12, 3, 7
    H = rng.standard_normal((k, L))
    mu = rng.standard_normal(k)
    w = rng.standard_normal((n, L))
    rows = mu + w @ H.T
    scores, eps = reconstruct_rows(H, mu, rows)
    assert float(np.linalg.norm(eps)) < 1e-8
    assert np.allclose(scores, w, atol=1e-8)


def test_reconstruct_rows_matches_normal_equations() -> None:
    rng = np.random.default_rng(61)
    k, L, n = 10, 4, 5
    H = rng.standard_normal((k, L))
    mu = rng.standard_normal(k)
    rows = rng.standard_normal((n, k))
    scores, eps = reconstruct_rows(H, mu, rows)
    gram_inv = np.linalg.inv(H.T @ H)
    for i in range(n):
        oracle = gram_inv @ H.T @ (rows[i] - mu)
        assert np.allclose(scores[i], oracle, atol=1e-9)
        assert np.allclose(eps[i], rows[i] - mu - H @ oracle, atol=1e-9)


def test_reconstruct_rows_error_scales_with_noise_floor() -> None:
    rng = np.random.default_rng(62)
    k, L, n = 20, 5, 30
    H = rng.standard_normal((k, L))
    mu = rng.standard_normal(k)
    w = rng.standard_normal((n, L))
    sigma = 0.05
    rows = mu + w @ H.T + sigma * rng.standard_normal((n, k))
    _, eps = reconstruct_rows(H, mu, rows)
    error = float(np.linalg.norm(eps))
    # least squares leaves the noise living in the (k - L)-dimensional
    # orthocomplement of the factor span, per row
    expected = sigma * np.sqrt(n * (k - L))
    assert abs(error - expected) / expected < 0.15


def test_reconstruct_rows_shape_check() -> None:
    with pytest.raises(NumericError):
        reconstruct_rows(np.ones((4, 2)), np.zeros(4), np.ones((3, 5)))


def planted_aggregate(
    seed: int, n_models: int = 3, n_sources: int = 14, k: int = 10, L: int = 2
) -> AggregateMatrix:
    rng = np.random.default_rng(seed)
    beta = rng.uniform(0.8, 1.2, k)
    gamma = rng.uniform(-0.5, 0.5, k)
    lam = np.zeros((k, L))
    for i in range(k):
        lam[i, i % L] = 0.7
    rows = []
    keys = []
    for m in range(n_models):
        w = rng.standard_normal(n_sources) * 1.5
        scores = rng.standard_normal((n_sources, L))
        noise = rng.standard_normal((n_sources, k)) * 0.4
        block = np.outer(w, beta) + gamma + scores @ lam.T + noise
        rows.append(block)
        keys.extend((f"model_{m}", f"s{i}") for i in range(n_sources))
    values = np.vstack(rows)
    return AggregateMatrix(
        rows=tuple(keys),
        col_labels=tuple(f"t{j}" for j in range(k)),
        values=values,
        missing=np.zeros(values.shape, dtype=bool),
    )


def test_loo_runs_and_reports_partitions() -> None:
    agg = planted_aggregate(70)
    res = loo_robustness(agg, "model_1", n_factors=2)
    assert res.held_out_model == "model_1"
    assert res.train_models == ("model_0", "model_2")
    assert len(res.test_rows) == 14
    assert res.scores.shape == (14, 2)
    assert res.error_l2 > 0.0


def test_loo_error_invariant_to_test_row_order() -> None:
    agg = planted_aggregate(71)
    res = loo_robustness(agg, "model_2", n_factors=2)

    # rebuild with the held-out block's rows shuffled
    idx = np.arange(len(agg.rows))
    test_idx = [i for i, (m, _) in enumerate(agg.rows) if m == "model_2"]
    perm = np.random.default_rng(0).permutation(test_idx)
    idx[test_idx] = perm
    shuffled = AggregateMatrix(
        rows=tuple(agg.rows[i] for i in idx),
        col_labels=agg.col_labels,
        values=agg.values[idx],
        missing=agg.missing[idx],
    )
    res2 = loo_robustness(shuffled, "model_2", n_factors=2)
    assert res2.error_l2 == pytest.approx(res.error_l2, rel=1e-9)


def test_loo_error_grows_when_structure_is_destroyed() -> None:
    agg = planted_aggregate(72)
    res = loo_robustness(agg, "model_0", n_factors=2)
    rng = np.random.default_rng(1)
    values = agg.values.copy()
    test_idx = [i for i, (m, _) in enumerate(agg.rows) if m == "model_0"]
    values[test_idx] = rng.standard_normal((len(test_idx), values.shape[1])) * 3.0
    broken = AggregateMatrix(
        rows=agg.rows,
        col_labels=agg.col_labels,
        values=values,
        missing=agg.missing,
    )
    res2 = loo_robustness(broken, "model_0", n_factors=2)
    assert res2.error_l2 > res.error_l2


def test_loo_unknown_model_and_small_training_set() -> None:
    agg = planted_aggregate(73)
    with pytest.raises(NumericError, match="ghost"):
        loo_robustness(agg, "ghost")
    tiny = planted_aggregate(74, n_models=2, n_sources=3, k=10)
    with pytest.raises(NumericError, match="training"):
        loo_robustness(tiny, "model_0", n_factors=6)
