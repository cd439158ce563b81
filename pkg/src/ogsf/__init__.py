"""Occlusion-guided scene flow estimation on 3D point clouds.

A numpy library with its own reverse-mode autodiff engine: coarse-to-fine
residual flow over point-cloud pyramids with an occlusion-masked cost volume,
plus losses, metrics, a synthetic scene generator, and a CLI harness.
"""

from .autodiff import (GraphError, ShapeError, Tensor, UnsupportedPrimitiveError,
                       apply_primitive, backward)
from .checkpoint import FormatError, load_checkpoint, save_checkpoint
from .data import (DataError, PointCloud, ScenePair, SynthConfig, export_ply,
                   load_sample, read_manifest, resample_fixed, save_sample,
                   synthesize_scene, write_manifest)
from .geometry import NeighborSet, farthest_point_sample, inverse_distance_interpolate, k_nearest
from .losses import LossWeights, fine_tune_loss, flow_loss, level_ground_truth, occlusion_loss, total_loss
from .metrics import MetricsReport, aggregate_reports, flow_metrics, occlusion_metrics, outlier_sweep
from .network import (ForwardResult, LevelPrediction, NetworkConfig, OGSFNet,
                      PyramidLevel, cost_volume, matching_costs, warp_target)
from .optim import Adam

__version__ = "0.1.0"
