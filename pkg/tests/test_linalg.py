"""Numerics kernels checked against independent reference computations."""

import numpy as np
import pytest

from unkdet.errors import ParameterError, ShapeError
from unkdet.linalg import (
    SvdResult,
    cosine_similarity,
    matmul,
    softmax_rows,
    svd,
    topk_indices,
    truncated_reconstruct,
)


def _matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestMatmul:
    """Product agrees with an explicit triple loop."""

    def test_against_loops(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m, k, n = rng.integers(1, 9, size=3)
            a = rng.standard_normal((m, k))
            b = rng.standard_normal((k, n))
            np.testing.assert_allclose(matmul(a, b), _matmul_loops(a, b), atol=1e-12)

    def test_inner_dim_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((4, 2)))


class TestSoftmaxRows:
    """Row softmax matches direct exp-normalize and survives extremes."""

    def test_against_direct(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            m = rng.standard_normal((rng.integers(1, 7), rng.integers(1, 7)))
            ref = np.exp(m) / np.exp(m).sum(axis=1, keepdims=True)
            np.testing.assert_allclose(softmax_rows(m), ref, atol=1e-12)

    def test_uniform_row(self):
        out = softmax_rows(np.zeros((1, 3)))
        np.testing.assert_allclose(out, np.full((1, 3), 1.0 / 3.0), atol=1e-15)

    def test_large_logits_no_overflow(self):
        out = softmax_rows(np.array([[1000.0, 0.0]]))
        np.testing.assert_allclose(out, np.array([[1.0, 0.0]]), atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        m = rng.standard_normal((5, 8)) * 50
        np.testing.assert_allclose(softmax_rows(m).sum(axis=1), np.ones(5), atol=1e-12)


def _svd_invariants(m, result: SvdResult):
    u, sigma, vt = result.u, result.sigma, result.vt
    p = min(m.shape)
    assert u.shape == (m.shape[0], p)
    assert sigma.shape == (p,)
    assert vt.shape == (p, m.shape[1])
    scale = max(1.0, float(np.abs(m).max()))
    recon = (u * sigma) @ vt
    assert np.abs(recon - m).max() <= 1e-6 * scale
    np.testing.assert_allclose(u.T @ u, np.eye(p), atol=1e-6)
    np.testing.assert_allclose(vt @ vt.T, np.eye(p), atol=1e-6)
    assert np.all(sigma >= 0.0)
    assert np.all(np.diff(sigma) <= 1e-12)


class TestSvd:
    """Factorization invariants hold on random, structured, and deficient inputs."""

    def test_random_shapes(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            m = rng.standard_normal((rng.integers(1, 65), rng.integers(1, 65)))
            _svd_invariants(m, svd(m))

    def test_known_diagonal(self):
        m = np.diag([3.0, 2.0, 1.0])
        result = svd(m)
        np.testing.assert_allclose(result.sigma, [3.0, 2.0, 1.0], atol=1e-10)
        _svd_invariants(m, result)

    def test_rank_one(self):
        u = np.array([[1.0], [2.0], [2.0]])
        v = np.array([[2.0, 1.0, 2.0, 0.0]])
        m = u @ v
        result = svd(m)
        np.testing.assert_allclose(result.sigma, [9.0, 0.0, 0.0], atol=1e-9)
        _svd_invariants(m, result)

    def test_singular_values_match_gram_eigvals(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            m = rng.standard_normal((rng.integers(2, 20), rng.integers(2, 20)))
            expected = np.sqrt(
                np.clip(np.sort(np.linalg.eigvalsh(m.T @ m))[::-1], 0.0, None)
            )[: min(m.shape)]
            np.testing.assert_allclose(svd(m).sigma, expected, atol=1e-8)

    def test_zero_matrix(self):
        result = svd(np.zeros((4, 3)))
        np.testing.assert_allclose(result.sigma, np.zeros(3), atol=0)
        _svd_invariants(np.zeros((4, 3)), result)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((17, 9))
        first = svd(m)
        second = svd(m)
        assert np.array_equal(first.u, second.u)
        assert np.array_equal(first.sigma, second.sigma)
        assert np.array_equal(first.vt, second.vt)

    def test_rejects_bad_input(self):
        with pytest.raises(ShapeError):
            svd(np.ones(3))
        with pytest.raises(ShapeError):
            svd(np.array([[np.nan, 1.0]]))


class TestTruncatedReconstruct:
    """Rank-r approximation achieves the Eckart-Young residual."""

    def test_residual_matches_tail_energy(self):
        rng = np.random.default_rng(6)
        m = rng.standard_normal((50, 32))
        sigma = svd(m).sigma
        for r in range(1, 33):
            approx = truncated_reconstruct(m, r)
            residual = np.linalg.norm(m - approx, ord="fro")
            expected = np.sqrt(np.sum(sigma[r:] ** 2))
            assert abs(residual - expected) <= 1e-5 * max(1.0, expected)

    def test_full_rank_is_identity(self):
        rng = np.random.default_rng(7)
        m = rng.standard_normal((10, 6))
        np.testing.assert_allclose(truncated_reconstruct(m, 6), m, atol=1e-9)

    def test_rank_bounds(self):
        m = np.ones((4, 5))
        with pytest.raises(ParameterError):
            truncated_reconstruct(m, 0)
        with pytest.raises(ParameterError):
            truncated_reconstruct(m, 5)


class TestTopkIndices:
    """Selection agrees with a full stable sort; ties prefer lower indices."""

    def test_against_full_sort(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n = int(rng.integers(1, 40))
            scores = rng.standard_normal(n)
            k = int(rng.integers(1, n + 1))
            order = sorted(range(n), key=lambda i: (-scores[i], i))
            np.testing.assert_array_equal(topk_indices(scores, k), order[:k])

    def test_tie_breaks_low_index_first(self):
        scores = np.array([1.0, 3.0, 3.0, 2.0, 3.0])
        np.testing.assert_array_equal(topk_indices(scores, 3), [1, 2, 4])

    def test_all_equal(self):
        np.testing.assert_array_equal(topk_indices(np.zeros(4), 4), [0, 1, 2, 3])

    def test_k_too_large(self):
        with pytest.raises(ParameterError):
            topk_indices(np.ones(3), 4)


class TestCosineSimilarity:
    """Dot-over-norms with a hard zero for degenerate vectors."""

    def test_parallel_and_orthogonal(self):
        assert cosine_similarity(np.array([2.0, 0.0]), np.array([5.0, 0.0])) == pytest.approx(1.0)
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == pytest.approx(0.0)
        assert cosine_similarity(np.array([1.0, 1.0]), np.array([-1.0, -1.0])) == pytest.approx(-1.0)

    def test_against_direct_formula(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            u = rng.standard_normal(6)
            v = rng.standard_normal(6)
            ref = float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))
            assert cosine_similarity(u, v) == pytest.approx(ref, abs=1e-12)

    def test_zero_vector_gives_zero(self):
        assert cosine_similarity(np.zeros(3), np.array([1.0, 2.0, 3.0])) == 0.0
        assert cosine_similarity(np.full(3, 1e-13), np.ones(3)) == 0.0

    def test_bounded(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            u = rng.standard_normal(4) * 1e3
            v = u * rng.uniform(0.5, 2.0)
            assert -1.0 <= cosine_similarity(u, v) <= 1.0
