"""Deterministic point-set primitives: sampling, neighbor search, upsampling.

Brute force throughout; fine at the point counts this package targets.
All ties break toward the lowest index so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, gather_rows, mul, reduce_sum

INTERP_EPSILON = 1e-8

# Cap on the number of pairwise distances materialized at once.
_CHUNK_BUDGET = 4_000_000


@dataclass
class NeighborSet:
    """K nearest reference points per query, sorted ascending by distance.

    indices: (n_q, K) int64 into the reference cloud
    distances: (n_q, K) Euclidean distances in meters
    """

    indices: np.ndarray
    distances: np.ndarray


def farthest_point_sample(points, m, seed_index=0):
    """Greedy farthest-point subset of `points` (n x 3).

    Returns m distinct indices in selection order, starting at seed_index.
    Each pick maximizes the minimum distance to everything already chosen.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"farthest_point_sample: m={m} out of range for {n} points")
    if not 0 <= seed_index < n:
        raise ValueError(f"farthest_point_sample: seed_index={seed_index} out of range for {n} points")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = seed_index
    # Squared distances give the same argmax ordering as true distances.
    min_sq = np.sum((points - points[seed_index]) ** 2, axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(min_sq))
        selected[i] = nxt
        min_sq = np.minimum(min_sq, np.sum((points - points[nxt]) ** 2, axis=1))
    return selected


def k_nearest(query, reference, k):
    """K nearest neighbors of each query point among the reference points.

    k is clamped to the reference size. Ties break toward the lower index.
    """
    query = np.asarray(query, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    n_r = reference.shape[0]
    if n_r == 0:
        raise ValueError("k_nearest: empty reference cloud")
    if k < 1:
        raise ValueError(f"k_nearest: k={k} must be positive")
    k = min(k, n_r)
    n_q = query.shape[0]
    chunk = max(1, _CHUNK_BUDGET // max(1, n_r))
    indices = np.empty((n_q, k), dtype=np.int64)
    distances = np.empty((n_q, k), dtype=np.float64)
    for start in range(0, n_q, chunk):
        q = query[start:start + chunk]
        d = np.linalg.norm(q[:, None, :] - reference[None, :, :], axis=2)
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        indices[start:start + chunk] = order
        distances[start:start + chunk] = np.take_along_axis(d, order, axis=1)
    return NeighborSet(indices=indices, distances=distances)


def inverse_distance_interpolate(coarse_positions, coarse_values, fine_positions,
                                 k=3, epsilon=INTERP_EPSILON):
    """Spread values from a coarse point set onto a finer one (the Upsample layer).

    Each fine value is the weighted mean of its k nearest coarse values with
    weights 1/(distance + epsilon). Differentiable with respect to the values;
    the weights are constants since the positions come from sampling.
    """
    coarse_positions = np.asarray(coarse_positions, dtype=np.float64)
    if coarse_positions.shape[0] == 0:
        raise ValueError("inverse_distance_interpolate: empty coarse set")
    if epsilon <= 0:
        raise ValueError("inverse_distance_interpolate: epsilon must be positive")
    values = as_tensor(coarse_values)
    nbrs = k_nearest(fine_positions, coarse_positions, k)
    weights = 1.0 / (nbrs.distances + epsilon)
    weights = weights / weights.sum(axis=1, keepdims=True)
    gathered = gather_rows(values, nbrs.indices)           # (n_fine, k, d)
    weighted = mul(gathered, Tensor(weights[:, :, None]))
    return reduce_sum(weighted, axis=1)
