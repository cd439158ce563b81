import numpy as np
import pytest

from ogsf.autodiff import Tensor, backward, mul, reduce_sum
from ogsf.geometry import farthest_point_sample, inverse_distance_interpolate, k_nearest

from helpers import finite_difference, relative_error


def fps_oracle(points, m, seed_index):
    """Exhaustive greedy selection, evaluated pair by pair."""
    n = len(points)
    chosen = [seed_index]
    for _ in range(m - 1):
        best, best_dist = None, -1.0
        for i in range(n):
            if i in chosen:
                continue
            d = min(float(np.sum((points[i] - points[j]) ** 2)) for j in chosen)
            if d > best_dist:
                best, best_dist = i, d
        chosen.append(best)
    return chosen


def knn_oracle(query, reference, k):
    """Per-query full sort on (distance, index)."""
    out_idx, out_dist = [], []
    for q in query:
        ranked = sorted(range(len(reference)),
                        key=lambda j: (float(np.linalg.norm(q - reference[j])), j))
        out_idx.append(ranked[:k])
        out_dist.append([float(np.linalg.norm(q - reference[j])) for j in ranked[:k]])
    return np.array(out_idx), np.array(out_dist)


def test_fps_line_fixture():
    points = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [10, 0, 0]], dtype=float)
    assert list(farthest_point_sample(points, 2, seed_index=0)) == [0, 3]


def test_fps_exhaustion_and_single():
    rng = np.random.default_rng(0)
    points = rng.normal(size=(6, 3))
    full = farthest_point_sample(points, 6, seed_index=2)
    assert full[0] == 2 and sorted(full) == list(range(6))
    assert list(farthest_point_sample(points, 1, seed_index=2)) == [2]


def test_fps_contract_errors():
    points = np.zeros((3, 3))
    with pytest.raises(ValueError):
        farthest_point_sample(points, 4)
    with pytest.raises(ValueError):
        farthest_point_sample(points, 0)
    with pytest.raises(ValueError):
        farthest_point_sample(points, 2, seed_index=3)


def test_fps_matches_oracle_randomized():
    rng = np.random.default_rng(11)
    for _ in range(40):
        n = int(rng.integers(2, 40))
        points = rng.normal(size=(n, 3))
        m = int(rng.integers(1, n + 1))
        seed = int(rng.integers(0, n))
        assert list(farthest_point_sample(points, m, seed)) == fps_oracle(points, m, seed)


def test_knn_fixture():
    reference = np.array([[1, 0, 0], [0, 2, 0], [0, 0, 3]], dtype=float)
    nbrs = k_nearest(np.array([[0.0, 0.0, 0.0]]), reference, 2)
    np.testing.assert_array_equal(nbrs.indices, [[0, 1]])
    np.testing.assert_allclose(nbrs.distances, [[1.0, 2.0]])


def test_knn_self_match_and_exhaustion():
    rng = np.random.default_rng(1)
    reference = rng.normal(size=(5, 3))
    nbrs = k_nearest(reference[2:3], reference, 1)
    assert nbrs.indices[0, 0] == 2
    assert nbrs.distances[0, 0] == 0.0
    full = k_nearest(reference[:1], reference, 5)
    assert sorted(full.indices[0]) == list(range(5))
    assert np.all(np.diff(full.distances[0]) >= 0)


def test_knn_clamps_k_and_rejects_empty():
    reference = np.zeros((2, 3))
    nbrs = k_nearest(np.zeros((1, 3)), reference, 10)
    assert nbrs.indices.shape == (1, 2)
    with pytest.raises(ValueError):
        k_nearest(np.zeros((1, 3)), np.zeros((0, 3)), 1)
    with pytest.raises(ValueError):
        k_nearest(np.zeros((1, 3)), reference, 0)


def test_knn_matches_oracle_randomized():
    rng = np.random.default_rng(12)
    for _ in range(40):
        n_r = int(rng.integers(1, 60))
        n_q = int(rng.integers(1, 20))
        k = int(rng.integers(1, n_r + 1))
        query = rng.normal(size=(n_q, 3))
        reference = rng.normal(size=(n_r, 3))
        nbrs = k_nearest(query, reference, k)
        oracle_idx, oracle_dist = knn_oracle(query, reference, k)
        np.testing.assert_array_equal(nbrs.indices, oracle_idx)
        np.testing.assert_allclose(nbrs.distances, oracle_dist, rtol=1e-12)


def test_knn_tie_breaks_low_index():
    reference = np.array([[1, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    nbrs = k_nearest(np.zeros((1, 3)), reference, 2)
    np.testing.assert_array_equal(nbrs.indices, [[0, 1]])


def test_interpolate_constant_field():
    rng = np.random.default_rng(2)
    coarse = rng.normal(size=(10, 3))
    fine = rng.normal(size=(25, 3))
    values = np.full((10, 4), 3.25)
    out = inverse_distance_interpolate(coarse, values, fine, k=3)
    np.testing.assert_allclose(out.data, 3.25)


def test_interpolate_two_point_weights():
    # distances 1 and 3 with weights 1/d normalize to 3/4 and 1/4
    coarse = np.array([[1.0, 0, 0], [3.0, 0, 0]])
    values = np.array([[10.0], [-2.0]])
    fine = np.array([[0.0, 0, 0]])
    out = inverse_distance_interpolate(coarse, values, fine, k=2, epsilon=1e-12)
    expected = (3 * 10.0 + 1 * -2.0) / 4
    np.testing.assert_allclose(out.data, [[expected]], rtol=1e-9)


def test_interpolate_coincident_point_dominates():
    coarse = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    values = np.array([[5.0], [9.0]])
    out = inverse_distance_interpolate(coarse, values, np.array([[0.0, 0, 0]]), k=2, epsilon=1e-10)
    assert abs(out.data[0, 0] - 5.0) < 1e-6


def test_interpolate_empty_coarse_rejected():
    with pytest.raises(ValueError):
        inverse_distance_interpolate(np.zeros((0, 3)), np.zeros((0, 1)), np.zeros((1, 3)))


def test_interpolate_convex_hull_bounds():
    rng = np.random.default_rng(3)
    for _ in range(20):
        coarse = rng.normal(size=(12, 3))
        values = rng.normal(size=(12, 2))
        fine = rng.normal(size=(30, 3))
        out = inverse_distance_interpolate(coarse, values, fine, k=4).data
        assert np.all(out >= values.min(axis=0) - 1e-12)
        assert np.all(out <= values.max(axis=0) + 1e-12)


def test_translation_equivariance():
    rng = np.random.default_rng(4)
    points = rng.normal(size=(30, 3))
    query = rng.normal(size=(8, 3))
    shift = np.array([10.0, -4.0, 2.5])
    assert list(farthest_point_sample(points, 7, 1)) == list(farthest_point_sample(points + shift, 7, 1))
    a = k_nearest(query, points, 4)
    b = k_nearest(query + shift, points + shift, 4)
    np.testing.assert_array_equal(a.indices, b.indices)
    values = rng.normal(size=(30, 2))
    ia = inverse_distance_interpolate(points, values, query, k=3).data
    ib = inverse_distance_interpolate(points + shift, values, query + shift, k=3).data
    np.testing.assert_allclose(ia, ib, atol=1e-9)


def test_interpolate_gradient_wrt_values():
    rng = np.random.default_rng(5)
    coarse = rng.normal(size=(7, 3))
    fine = rng.normal(size=(11, 3))
    values0 = rng.normal(size=(7, 2))
    readout = rng.normal(size=(11, 2))

    def f(vals):
        out = inverse_distance_interpolate(coarse, vals, fine, k=3)
        return float(reduce_sum(mul(out, Tensor(readout))).data)

    v = Tensor(values0.copy(), requires_grad=True)
    out = inverse_distance_interpolate(coarse, v, fine, k=3)
    grads = backward(reduce_sum(mul(out, Tensor(readout))))
    fd = finite_difference(f, values0.copy())
    assert relative_error(grads[v], fd) < 1e-4
