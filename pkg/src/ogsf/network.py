"""Occlusion-guided scene flow network.

The pipeline per pyramid level: warp the target toward the source with the
upsampled flow, build an occlusion-masked cost volume over warped-target
neighborhoods, then predict a residual flow and an occlusion probability from
shared propagation features. Levels run coarse to fine; predictions are
upsampled between levels and finally onto the full-resolution input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, as_tensor, concat, gather_rows, mul, reciprocal, reduce_max, reduce_sum, scale, sqrt
from .geometry import INTERP_EPSILON, farthest_point_sample, inverse_distance_interpolate, k_nearest
from .layers import MLP, PointConv

N_LEVELS = 4


@dataclass
class NetworkConfig:
    """Architecture knobs. Level 0 is the finest predicted level.

    level_counts must be strictly decreasing; feature_dims / cost_volume_dims
    give the per-level feature and matching-cost widths.
    """

    level_counts: tuple = (128, 32, 16, 8)
    feature_dims: tuple = (16, 24, 48, 80)
    cost_volume_dims: tuple = (8, 16, 32, 64)
    k_neighbors: int = 16
    k_upsample: int = 3
    leaky_slope: float = 0.1
    weight_mlp_hidden: int = 32
    mask_cost_volume: bool = True
    seed: int = 0

    def __post_init__(self):
        self.level_counts = tuple(int(c) for c in self.level_counts)
        self.feature_dims = tuple(int(d) for d in self.feature_dims)
        self.cost_volume_dims = tuple(int(d) for d in self.cost_volume_dims)
        for name in ("level_counts", "feature_dims", "cost_volume_dims"):
            if len(getattr(self, name)) != N_LEVELS:
                raise ValueError(f"NetworkConfig: {name} must have {N_LEVELS} entries")
        if any(a <= b for a, b in zip(self.level_counts, self.level_counts[1:])):
            raise ValueError(f"NetworkConfig: level_counts must be strictly decreasing, got {self.level_counts}")

    @classmethod
    def desk_scale(cls, **overrides):
        """Small preset that trains in minutes on one CPU core (512-point clouds)."""
        return cls(**overrides)

    @classmethod
    def full_scale(cls, **overrides):
        """Preset sized for 8192-point clouds."""
        base = dict(level_counts=(2048, 512, 256, 128), feature_dims=(64, 96, 192, 320),
                    cost_volume_dims=(32, 64, 128, 256))
        base.update(overrides)
        return cls(**base)


@dataclass
class PyramidLevel:
    """One downsampled cloud: positions, learned features, and sampling indices."""

    index: int
    positions: np.ndarray          # (n_l, 3), constant
    features: Tensor               # (n_l, d_l)
    indices: np.ndarray            # selection into the previous level
    abs_indices: np.ndarray        # selection into the original input cloud


@dataclass
class LevelPrediction:
    """Flow and occlusion estimates at one pyramid level.

    flow is exactly up_flow + residual; occlusion holds probabilities in [0, 1]
    (1 = non-occluded). The upsampled inputs are kept for auditing.
    """

    level: int
    flow: Tensor                   # (n_l, 3)
    occlusion: Tensor              # (n_l, 1)
    residual: Tensor               # (n_l, 3)
    up_flow: Tensor                # (n_l, 3)
    up_occlusion: Tensor           # (n_l, 1)
    abs_indices: np.ndarray


@dataclass
class ForwardResult:
    levels: list                   # LevelPrediction, index 0 finest
    flow: Tensor                   # (n1, 3) at input resolution
    occlusion: Tensor              # (n1, 1) at input resolution


def warp_target(source_positions, target_positions, up_flow, k=3, epsilon=INTERP_EPSILON):
    """Move target points toward the source using the current flow estimate.

    The source is pushed forward by up_flow; each target point then takes the
    inverse-distance weighted mean of the negated flow over its k nearest
    warped-source points and shifts by that backward flow. Differentiable in
    up_flow, including through the distance weights.
    """
    source_positions = np.asarray(source_positions, dtype=np.float64)
    target_positions = np.asarray(target_positions, dtype=np.float64)
    if source_positions.shape[0] == 0 or target_positions.shape[0] == 0:
        raise ValueError("warp_target: empty cloud")
    up_flow = as_tensor(up_flow)
    warped_source = add(Tensor(source_positions), up_flow)
    nbrs = k_nearest(target_positions, warped_source.data, k)
    gathered = gather_rows(warped_source, nbrs.indices)                 # (n2, k, 3)
    rel = gathered - Tensor(target_positions[:, None, :])
    dist = sqrt(reduce_sum(mul(rel, rel), axis=2, keepdims=True))       # (n2, k, 1)
    weights = reciprocal(add(dist, Tensor(epsilon)))
    neg_flow = gather_rows(scale(up_flow, -1.0), nbrs.indices)          # (n2, k, 3)
    numer = reduce_sum(mul(weights, neg_flow), axis=1)                  # (n2, 3)
    denom = reduce_sum(weights, axis=1)                                 # (n2, 1)
    backward_flow = mul(numer, reciprocal(denom))
    return add(Tensor(target_positions), backward_flow)


def matching_costs(source_positions, source_features, warped_positions, target_features,
                   occlusion, cost_net, k=16):
    """Per-neighbor matching costs, occlusion-masked, before aggregation.

    cost(p_i, q_j) = occ(p_i) * h(c_i, g_j, q_j - p_i) over the k nearest
    warped-target neighbors q_j of each source point p_i, where h concatenates
    its inputs and runs them through `cost_net`. Returns (n, k, d_cv).
    """
    source_positions = np.asarray(source_positions, dtype=np.float64)
    n = source_positions.shape[0]
    warped = as_tensor(warped_positions)
    if warped.data.shape[0] == 0:
        raise ValueError("matching_costs: empty warped target")
    occlusion = as_tensor(occlusion)
    if occlusion.ndim != 2 or occlusion.shape[0] != n:
        raise ValueError(f"matching_costs: occlusion must be (n, 1), got {occlusion.shape}")

    nbrs = k_nearest(source_positions, warped.data, k)
    k_eff = nbrs.indices.shape[1]
    self_idx = np.broadcast_to(np.arange(n)[:, None], (n, k_eff))
    c_i = gather_rows(as_tensor(source_features), self_idx)             # (n, k, d_s)
    g_j = gather_rows(as_tensor(target_features), nbrs.indices)         # (n, k, d_t)
    q_j = gather_rows(warped, nbrs.indices)                             # (n, k, 3)
    rel = q_j - Tensor(source_positions[:, None, :])
    costs = cost_net(concat([c_i, g_j, rel]))                           # (n, k, d_cv)
    mask = gather_rows(occlusion, np.arange(n)[:, None])                # (n, 1, 1)
    return mul(mask, costs)


def cost_volume(source_positions, source_features, warped_positions, target_features,
                occlusion, cost_net, k=16):
    """Channel-wise max over the per-neighbor matching costs. Returns (n, d_cv)."""
    costs = matching_costs(source_positions, source_features, warped_positions,
                           target_features, occlusion, cost_net, k)
    return reduce_max(costs, axis=1)


class Predictor:
    """Shared feature propagation followed by parallel flow and occlusion heads.

    Propagation concatenates source features, the cost volume, upsampled flow
    and upsampled occlusion, then runs two PointConvs and a two-layer MLP.
    The flow head is a single affine emitting a residual; the occlusion head is
    a two-layer MLP ending in a sigmoid.
    """

    def __init__(self, d_feat, d_cv, rng, name, k=16, hidden=32, slope=0.1):
        d_in = d_feat + d_cv + 3 + 1
        d = d_feat
        self.conv0 = PointConv(d_in, d, rng, name=f"{name}.conv0", k=k, hidden=hidden,
                               activation="leaky-relu", slope=slope)
        self.conv1 = PointConv(d, d, rng, name=f"{name}.conv1", k=k, hidden=hidden,
                               activation="leaky-relu", slope=slope)
        self.mlp = MLP([d, d, d], rng, name=f"{name}.mlp", final_activation="leaky-relu", slope=slope)
        self.flow_head = MLP([d, 3], rng, name=f"{name}.flow", final_activation=None, slope=slope)
        self.occ_head = MLP([d, d, 1], rng, name=f"{name}.occ", final_activation="sigmoid", slope=slope)

    def __call__(self, positions, source_features, cv, up_flow, up_occlusion):
        x = concat([as_tensor(source_features), cv, as_tensor(up_flow), as_tensor(up_occlusion)])
        x = self.conv0(positions, positions, x)
        x = self.conv1(positions, positions, x)
        x = self.mlp(x)
        residual = self.flow_head(x)
        occ = self.occ_head(x)
        return residual, occ

    def params(self):
        out = {}
        for module in (self.conv0, self.conv1, self.mlp, self.flow_head, self.occ_head):
            out.update(module.params())
        return out


class OGSFNet:
    """Coarse-to-fine scene flow with occlusion-guided cost volumes.

    Source and target share the pyramid feature extractor (siamese). Every
    level owns its cost-volume network and predictor.
    """

    def __init__(self, config=None, feature_width=3):
        self.config = config or NetworkConfig()
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        self.pyramid_convs = []
        self.cost_nets = []
        self.predictors = []
        d_prev = feature_width
        for l in range(N_LEVELS):
            d_l, d_cv = cfg.feature_dims[l], cfg.cost_volume_dims[l]
            self.pyramid_convs.append(PointConv(
                d_prev, d_l, rng, name=f"pyramid{l}", k=cfg.k_neighbors,
                hidden=cfg.weight_mlp_hidden, activation="leaky-relu", slope=cfg.leaky_slope))
            self.cost_nets.append(MLP(
                [2 * d_l + 3, d_cv, d_cv], rng, name=f"cost{l}",
                final_activation=None, slope=cfg.leaky_slope))
            self.predictors.append(Predictor(
                d_l, d_cv, rng, name=f"predictor{l}", k=cfg.k_neighbors,
                hidden=cfg.weight_mlp_hidden, slope=cfg.leaky_slope))
            d_prev = d_l

    def parameters(self):
        """Ordered {name: Tensor} over every learnable weight."""
        out = {}
        for module in (*self.pyramid_convs, *self.cost_nets, *self.predictors):
            out.update(module.params())
        return out

    def load_state(self, arrays):
        """Install checkpoint arrays; mismatched names or shapes are rejected."""
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise ValueError(f"checkpoint does not match network: missing {missing}, unexpected {extra}")
        bad = [name for name in params if params[name].data.shape != arrays[name].shape]
        if bad:
            raise ValueError(f"checkpoint tensor shapes do not match network for: {bad}")
        for name, p in params.items():
            p.data = np.asarray(arrays[name], dtype=np.float64)

    def build_pyramid(self, cloud, fps_seed=0):
        """Four downsampled levels of `cloud` with learned features."""
        cfg = self.config
        positions = np.asarray(cloud.positions, dtype=np.float64)
        if cfg.level_counts[0] > positions.shape[0]:
            raise ValueError(f"build_pyramid: level 0 needs {cfg.level_counts[0]} points, "
                             f"cloud has {positions.shape[0]}")
        features = as_tensor(cloud.features)
        prev_abs = np.arange(positions.shape[0], dtype=np.int64)
        levels = []
        for l, count in enumerate(cfg.level_counts):
            sel = farthest_point_sample(positions, count, seed_index=fps_seed)
            new_positions = positions[sel]
            new_features = self.pyramid_convs[l](new_positions, positions, features)
            abs_idx = prev_abs[sel]
            levels.append(PyramidLevel(l, new_positions, new_features, sel, abs_idx))
            positions, features, prev_abs = new_positions, new_features, abs_idx
        return levels

    def forward(self, source, target, fps_seed=0):
        """Run the full pipeline on a source/target PointCloud pair."""
        cfg = self.config
        s_levels = self.build_pyramid(source, fps_seed)
        t_levels = self.build_pyramid(target, fps_seed)

        n_coarse = cfg.level_counts[-1]
        up_flow = Tensor(np.zeros((n_coarse, 3)))
        up_occ = Tensor(np.ones((n_coarse, 1)))
        predictions = [None] * N_LEVELS
        for l in range(N_LEVELS - 1, -1, -1):
            sl, tl = s_levels[l], t_levels[l]
            warped = warp_target(sl.positions, tl.positions, up_flow,
                                 k=cfg.k_upsample, epsilon=INTERP_EPSILON)
            mask = up_occ if cfg.mask_cost_volume else Tensor(np.ones((sl.positions.shape[0], 1)))
            cv = cost_volume(sl.positions, sl.features, warped, tl.features,
                             mask, self.cost_nets[l], k=cfg.k_neighbors)
            residual, occ = self.predictors[l](sl.positions, sl.features, cv, up_flow, up_occ)
            flow = add(up_flow, residual)
            predictions[l] = LevelPrediction(l, flow, occ, residual, up_flow, up_occ, sl.abs_indices)
            if l > 0:
                finer = s_levels[l - 1].positions
                up_flow = inverse_distance_interpolate(sl.positions, flow, finer, k=cfg.k_upsample)
                up_occ = inverse_distance_interpolate(sl.positions, occ, finer, k=cfg.k_upsample)

        full_positions = np.asarray(source.positions, dtype=np.float64)
        full_flow = inverse_distance_interpolate(s_levels[0].positions, predictions[0].flow,
                                                 full_positions, k=cfg.k_upsample)
        full_occ = inverse_distance_interpolate(s_levels[0].positions, predictions[0].occlusion,
                                                full_positions, k=cfg.k_upsample)
        return ForwardResult(levels=predictions, flow=full_flow, occlusion=full_occ)
