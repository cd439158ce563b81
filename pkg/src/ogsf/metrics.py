"""Evaluation metrics for scene flow and occlusion estimation.

All metrics work on plain arrays (no gradients). Ratio metrics run over all
points, occluded or not; EPE additionally reports the non-occluded mean when
occlusion ground truth is available.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

SWEEP_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass
class MetricsReport:
    """Flow metrics in meters/ratios; occlusion entries are None without labels."""

    epe_full: float
    epe: float | None
    acc05: float
    acc10: float
    outlier: float
    occ_accuracy: float | None = None
    occ_f1: float | None = None

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self):
        lines = []
        for name, value in self.to_dict().items():
            lines.append(f"{name} = {value:.6f}" if value is not None else f"{name} = n/a")
        return "\n".join(lines)


def flow_metrics(pred_flow, gt_flow, occ_gt=None):
    """Per-frame EPE, accuracy and outlier ratios.

    acc05: error < 0.05 m or relative error < 5%; acc10 analogous at 0.1/10%;
    outlier: error > 0.3 m or relative error > 10%. The relative clause is
    skipped for points with zero ground-truth flow.
    """
    pred_flow = np.asarray(pred_flow, dtype=np.float64)
    gt_flow = np.asarray(gt_flow, dtype=np.float64)
    if pred_flow.shape != gt_flow.shape or pred_flow.ndim != 2 or pred_flow.shape[0] == 0:
        raise ValueError(f"flow_metrics: bad shapes {pred_flow.shape} vs {gt_flow.shape}")
    err = np.linalg.norm(pred_flow - gt_flow, axis=1)
    gt_norm = np.linalg.norm(gt_flow, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(gt_norm > 0, err / gt_norm, np.inf)

    epe_full = float(err.mean())
    acc05 = float(np.mean((err < 0.05) | (rel < 0.05)))
    acc10 = float(np.mean((err < 0.1) | (rel < 0.10)))
    outlier = float(np.mean((err > 0.3) | ((gt_norm > 0) & (rel > 0.10))))

    epe = None
    if occ_gt is not None:
        occ_gt = np.asarray(occ_gt, dtype=np.float64).reshape(-1)
        visible = occ_gt == 1.0
        epe = float(err[visible].mean()) if visible.any() else None
    return MetricsReport(epe_full=epe_full, epe=epe, acc05=acc05, acc10=acc10, outlier=outlier)


def outlier_sweep(pred_flow, gt_flow, thresholds=SWEEP_THRESHOLDS):
    """Fraction of points with error above each absolute threshold (meters)."""
    pred_flow = np.asarray(pred_flow, dtype=np.float64)
    gt_flow = np.asarray(gt_flow, dtype=np.float64)
    err = np.linalg.norm(pred_flow - gt_flow, axis=1)
    return {float(t): float(np.mean(err > t)) for t in thresholds}


def occlusion_metrics(probs, gt, threshold=0.5):
    """Accuracy and F1 of the thresholded occlusion labels.

    Probabilities at or above the threshold predict non-occluded (label 1).
    F1 treats the occluded class (label 0) as the positive detection target;
    an empty confusion (no occluded points anywhere) scores 0.
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1)
    if probs.shape != gt.shape:
        raise ValueError(f"occlusion_metrics: {probs.shape} probabilities vs {gt.shape} labels")
    if not np.all((gt == 0.0) | (gt == 1.0)):
        raise ValueError("occlusion_metrics: ground-truth labels must be 0 or 1")
    labels = (probs >= threshold).astype(np.float64)
    accuracy = float(np.mean(labels == gt))
    tp = float(np.sum((labels == 0) & (gt == 0)))
    fp = float(np.sum((labels == 0) & (gt == 1)))
    fn = float(np.sum((labels == 1) & (gt == 0)))
    denom = 2 * tp + fp + fn
    f1 = float(2 * tp / denom) if denom > 0 else 0.0
    return accuracy, f1


def aggregate_reports(reports):
    """Uniform per-frame mean of every metric; optional fields skip frames without them."""
    if not reports:
        raise ValueError("aggregate_reports: no reports")
    out = {}
    for f in fields(MetricsReport):
        values = [getattr(r, f.name) for r in reports if getattr(r, f.name) is not None]
        out[f.name] = float(np.mean(values)) if values else None
    return MetricsReport(**out)
