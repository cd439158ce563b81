"""Multi-level training losses for flow and occlusion.

All losses return scalar Tensors wired into the autodiff graph. Ground truth
at a pyramid level is the input-resolution ground truth picked out at that
level's sampled source indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, absolute, add, mul, reduce_sum, scale, sqrt

DEFAULT_ALPHA = (0.02, 0.04, 0.08, 0.16)
BETA_RATIO = 1.4


@dataclass
class LossWeights:
    """Per-level flow weights alpha, occlusion weights beta, and balance lam."""

    alpha: tuple = DEFAULT_ALPHA
    beta: tuple = None
    lam: float = 0.3

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        if self.beta is None:
            self.beta = tuple(BETA_RATIO * a for a in self.alpha)
        else:
            self.beta = tuple(float(b) for b in self.beta)
        if any(a <= 0 for a in self.alpha) or any(b <= 0 for b in self.beta) or self.lam <= 0:
            raise ValueError("LossWeights: weights must be positive")


def level_ground_truth(predictions, gt_flow, gt_occ=None):
    """Subset input-resolution ground truth to each level's sampled points."""
    flows = [np.asarray(gt_flow, dtype=np.float64)[p.abs_indices] for p in predictions]
    if gt_occ is None:
        return flows, None
    occs = [np.asarray(gt_occ, dtype=np.float64).reshape(-1)[p.abs_indices] for p in predictions]
    return flows, occs


def _error_norms(pred_flow, gt):
    diff = pred_flow - Tensor(gt)
    return sqrt(reduce_sum(mul(diff, diff), axis=1))


def flow_loss(predictions, gt_flows, gt_occs, alpha=DEFAULT_ALPHA):
    """Sum over levels of alpha_l * sum_i (occ'_i + 1) * ||f_i - f'_i||.

    Non-occluded points (occ' = 1) count twice; occluded points once, so flow
    is still supervised everywhere.
    """
    if gt_flows is None or gt_occs is None:
        raise ValueError("flow_loss: ground-truth flow and occlusion are required")
    total = None
    for pred, gt, occ in zip(predictions, gt_flows, gt_occs):
        occ = np.asarray(occ, dtype=np.float64).reshape(-1)
        if not np.all((occ == 0.0) | (occ == 1.0)):
            raise ValueError("flow_loss: ground-truth occlusion labels must be 0 or 1")
        norms = _error_norms(pred.flow, gt)
        term = scale(reduce_sum(mul(norms, Tensor(occ + 1.0))), alpha[pred.level])
        total = term if total is None else add(total, term)
    return total


def occlusion_loss(predictions, gt_occs, beta):
    """Sum over levels of beta_l * sum_i |occ_i - occ'_i| on probabilities."""
    total = None
    for pred, occ in zip(predictions, gt_occs):
        occ = np.asarray(occ, dtype=np.float64).reshape(-1, 1)
        if occ.shape[0] != pred.occlusion.shape[0]:
            raise ValueError(f"occlusion_loss: {occ.shape[0]} labels for "
                             f"{pred.occlusion.shape[0]} predictions at level {pred.level}")
        term = scale(reduce_sum(absolute(pred.occlusion - Tensor(occ))), beta[pred.level])
        total = term if total is None else add(total, term)
    return total


def total_loss(flow_term, occlusion_term, lam):
    """flow + lam * occlusion."""
    if lam <= 0:
        raise ValueError("total_loss: lam must be positive")
    return add(flow_term, scale(occlusion_term, lam))


def fine_tune_loss(predictions, gt_flows, alpha=DEFAULT_ALPHA):
    """Flow loss without the occlusion-weighted term; needs no occlusion labels."""
    total = None
    for pred, gt in zip(predictions, gt_flows):
        term = scale(reduce_sum(_error_norms(pred.flow, gt)), alpha[pred.level])
        total = term if total is None else add(total, term)
    return total
