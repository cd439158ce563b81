"""Training, evaluation, inference, and gradient-check workflows.

These functions are the engine behind the CLI but are import-friendly so the
same runs can be driven from scripts and tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import add, backward, scale
from .checkpoint import FormatError, load_checkpoint, save_checkpoint
from .config import ConfigError
from .data import DataError, export_ply, load_sample, read_manifest, resample_fixed, save_sample, ScenePair
from .losses import LossWeights, fine_tune_loss, flow_loss, level_ground_truth, occlusion_loss, total_loss
from .metrics import MetricsReport, SWEEP_THRESHOLDS, aggregate_reports, flow_metrics, occlusion_metrics, outlier_sweep
from .network import OGSFNet
from .optim import Adam

GRADCHECK_TOLERANCE = 1e-3
_FD_STEP = 1e-5


class NumericError(RuntimeError):
    """Training or inference produced a non-finite value."""


def learning_rate(epoch, cfg):
    """Stepwise-decayed rate: multiply by lr_decay at every lr_decay_interval
    boundary, switching to lr_late_factor for boundaries at or past lr_late_start."""
    lr = cfg.learning_rate
    for boundary in range(cfg.lr_decay_interval, epoch + 1, cfg.lr_decay_interval):
        lr *= cfg.lr_decay if boundary < cfg.lr_late_start else cfg.lr_late_factor
    return lr


def lambda_weight(epoch, cfg):
    """Occlusion-loss balance, ramped linearly over the first ramp epochs."""
    ramp = min(epoch, cfg.lambda_ramp_epochs) / cfg.lambda_ramp_epochs
    return cfg.lambda_start + (cfg.lambda_end - cfg.lambda_start) * ramp


def load_dataset(manifest_path):
    if manifest_path is None:
        raise ConfigError("no dataset manifest configured")
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ConfigError(f"manifest not found: {manifest_path}")
    pairs = []
    for sample_path in read_manifest(manifest_path):
        try:
            pairs.append(load_sample(sample_path))
        except FileNotFoundError:
            raise DataError(f"sample not found: {sample_path}") from None
        except (FormatError, ValueError) as exc:
            raise DataError(f"cannot load {sample_path}: {exc}") from None
    if not pairs:
        raise DataError(f"manifest {manifest_path} lists no samples")
    return pairs


def _load_network(cfg, require_checkpoint):
    net = OGSFNet(cfg.network)
    if cfg.checkpoint_in is not None:
        try:
            net.load_state(load_checkpoint(cfg.checkpoint_in))
        except FileNotFoundError:
            raise ConfigError(f"checkpoint not found: {cfg.checkpoint_in}") from None
        except (FormatError, ValueError) as exc:
            raise ConfigError(f"cannot use checkpoint {cfg.checkpoint_in}: {exc}") from None
    elif require_checkpoint:
        raise ConfigError("this mode needs a checkpoint (set `checkpoint` or --checkpoint)")
    return net


def pair_loss(net, pair, weights, lam, fine_tune=False, fps_seed=0):
    """Forward one pair and assemble its training loss graph.

    Returns (loss, flow term value, occlusion term value).
    """
    result = net.forward(pair.source, pair.target, fps_seed=fps_seed)
    if pair.gt_flow is None:
        raise DataError("training pair has no ground-truth flow")
    if fine_tune:
        gt_flows, _ = level_ground_truth(result.levels, pair.gt_flow)
        loss = fine_tune_loss(result.levels, gt_flows, weights.alpha)
        return loss, float(loss.data), 0.0
    if pair.gt_occ is None:
        raise DataError("training pair has no occlusion labels (use fine_tune for flow-only data)")
    gt_flows, gt_occs = level_ground_truth(result.levels, pair.gt_flow, pair.gt_occ)
    f_term = flow_loss(result.levels, gt_flows, gt_occs, weights.alpha)
    o_term = occlusion_loss(result.levels, gt_occs, weights.beta)
    return total_loss(f_term, o_term, lam), float(f_term.data), float(o_term.data)


def run_train(cfg, log=print):
    """Train per the run config; returns (net, per-epoch history list)."""
    net = _load_network(cfg, require_checkpoint=False)
    pairs = load_dataset(cfg.manifest)
    if any(p.gt_flow is None for p in pairs):
        raise DataError("training dataset needs ground-truth flow in every sample")
    if not cfg.fine_tune and any(p.gt_occ is None for p in pairs):
        raise DataError("training dataset needs occlusion labels unless fine_tune is set")
    if cfg.resample_points is not None:
        pairs = [resample_fixed(p, cfg.resample_points, rng_seed=cfg.seed + i)
                 for i, p in enumerate(pairs)]
    val_pairs = load_dataset(cfg.val_manifest) if cfg.val_manifest else None

    params = net.parameters()
    opt = Adam(params.values(), lr=cfg.learning_rate)
    weights = LossWeights()
    rng = np.random.default_rng(cfg.seed)
    if cfg.checkpoint_out is not None:
        save_checkpoint(cfg.checkpoint_out, params)

    history = []
    best_val = np.inf
    for epoch in range(cfg.epochs):
        opt.lr = learning_rate(epoch, cfg)
        lam = lambda_weight(epoch, cfg)
        order = rng.permutation(len(pairs))
        flow_sum = occ_sum = loss_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            batch_loss = None
            for i in batch:
                loss, f_val, o_val = pair_loss(net, pairs[i], weights, lam,
                                               fine_tune=cfg.fine_tune, fps_seed=cfg.fps_seed)
                flow_sum += f_val
                occ_sum += o_val
                loss_sum += float(loss.data)
                batch_loss = loss if batch_loss is None else add(batch_loss, loss)
            batch_loss = scale(batch_loss, 1.0 / len(batch))
            if not np.isfinite(batch_loss.data):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            backward(batch_loss)
            opt.step()
            opt.zero_grad()
        n = len(pairs)
        entry = {"epoch": epoch, "flow_loss": flow_sum / n, "occ_loss": occ_sum / n,
                 "total_loss": loss_sum / n, "lr": opt.lr, "lambda": lam}
        if val_pairs is not None:
            entry["val_epe_full"] = _mean_epe_full(net, val_pairs, cfg.fps_seed)
        history.append(entry)
        log(f"epoch {epoch} flow_loss {entry['flow_loss']:.6f} occ_loss {entry['occ_loss']:.6f} "
            f"total_loss {entry['total_loss']:.6f} lr {opt.lr:.6g} lambda {lam:.4f}")
        if cfg.checkpoint_out is not None:
            save_checkpoint(cfg.checkpoint_out, params)
            if val_pairs is not None and entry["val_epe_full"] < best_val:
                best_val = entry["val_epe_full"]
                save_checkpoint(Path(str(cfg.checkpoint_out) + ".best"), params)
    return net, history


def _mean_epe_full(net, pairs, fps_seed):
    errors = []
    for pair in pairs:
        result = net.forward(pair.source, pair.target, fps_seed=fps_seed)
        errors.append(float(np.linalg.norm(result.flow.data - pair.gt_flow, axis=1).mean()))
    return float(np.mean(errors))


def evaluate_pairs(net, pairs, fps_seed=0):
    """Per-frame metric reports plus the per-frame outlier sweeps."""
    reports, sweeps = [], []
    for pair in pairs:
        if pair.gt_flow is None:
            raise DataError("evaluation pair has no ground-truth flow")
        result = net.forward(pair.source, pair.target, fps_seed=fps_seed)
        pred_flow = result.flow.data
        report = flow_metrics(pred_flow, pair.gt_flow, pair.gt_occ)
        if pair.gt_occ is not None and np.all((pair.gt_occ == 0) | (pair.gt_occ == 1)):
            acc, f1 = occlusion_metrics(result.occlusion.data, pair.gt_occ)
            report.occ_accuracy, report.occ_f1 = acc, f1
        reports.append(report)
        sweeps.append(outlier_sweep(pred_flow, pair.gt_flow))
    return reports, sweeps


def run_eval(cfg, log=print):
    """Evaluate a checkpoint over a manifest; returns (aggregate, reports, sweep)."""
    net = _load_network(cfg, require_checkpoint=True)
    pairs = load_dataset(cfg.manifest)
    reports, sweeps = evaluate_pairs(net, pairs, fps_seed=cfg.fps_seed)
    aggregate = aggregate_reports(reports)
    sweep = {t: float(np.mean([s[t] for s in sweeps])) for t in SWEEP_THRESHOLDS}
    log(aggregate.to_text())
    log("outlier_sweep " + " ".join(f"{t:.1f}:{sweep[t]:.6f}" for t in SWEEP_THRESHOLDS))
    return aggregate, reports, sweep


def run_infer(cfg, log=print):
    """Write per-frame predictions beside the inputs (or into out_dir).

    Prediction files reuse the sample format with the ground-truth slots
    holding the predicted flow and occlusion probabilities.
    """
    net = _load_network(cfg, require_checkpoint=True)
    if cfg.manifest is None or not Path(cfg.manifest).exists():
        raise ConfigError(f"manifest not found: {cfg.manifest}")
    written = []
    for sample_path in read_manifest(cfg.manifest):
        try:
            pair = load_sample(sample_path)
        except (FileNotFoundError, FormatError, ValueError) as exc:
            raise DataError(f"cannot load {sample_path}: {exc}") from None
        result = net.forward(pair.source, pair.target, fps_seed=cfg.fps_seed)
        flow = result.flow.data
        occ = np.clip(result.occlusion.data.reshape(-1), 0.0, 1.0)
        if not (np.isfinite(flow).all() and np.isfinite(occ).all()):
            raise NumericError(f"non-finite prediction for {sample_path}")
        out_dir = Path(cfg.out_dir) if cfg.out_dir is not None else Path(sample_path).parent
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = Path(sample_path).stem
        out_path = out_dir / f"{stem}_pred.ogsf"
        save_sample(ScenePair(source=pair.source, target=pair.target,
                              gt_flow=flow, gt_occ=occ), out_path)
        written.append(out_path)
        if cfg.export_ply:
            ply_path = out_dir / f"{stem}_pred.ply"
            export_ply(ply_path, pair.source.positions, pair.target.positions,
                       pair.source.positions + flow, occ)
            written.append(ply_path)
        log(f"wrote {out_path}")
    return written


def parameter_family(name):
    """Group parameter names into the layer families the gradcheck reports."""
    head, _, rest = name.partition(".")
    if head.startswith("pyramid"):
        return "pyramid_conv"
    if head.startswith("cost"):
        return "cost_volume"
    if head.startswith("predictor"):
        sub = rest.split(".", 1)[0]
        return {"conv0": "predictor_conv", "conv1": "predictor_conv",
                "mlp": "predictor_mlp", "flow": "flow_head", "occ": "occ_head"}[sub]
    raise ValueError(f"cannot classify parameter {name!r}")


@dataclass
class GradcheckReport:
    families: dict
    tolerance: float = GRADCHECK_TOLERANCE

    @property
    def passed(self):
        return all(err <= self.tolerance for err in self.families.values())

    @property
    def failed_families(self):
        return sorted(name for name, err in self.families.items() if err > self.tolerance)

    def lines(self):
        out = []
        for name in sorted(self.families):
            err = self.families[name]
            status = "pass" if err <= self.tolerance else "FAIL"
            out.append(f"family {name} max_rel_err {err:.3e} {status}")
        out.append(f"gradcheck {'pass' if self.passed else 'FAIL'} (tolerance {self.tolerance:.1e})")
        return out


def run_gradcheck(cfg, entries_per_family=10, log=print):
    """Compare analytic gradients of the total loss against central differences.

    Uses a small synthetic pair from cfg.synth and the configured network.
    Reports the max relative error per layer family.
    """
    from .data import synthesize_scene

    net = _load_network(cfg, require_checkpoint=False)
    pair = synthesize_scene(cfg.synth)
    weights = LossWeights()
    lam = cfg.lambda_start

    def loss_value():
        loss, _, _ = pair_loss(net, pair, weights, lam, fps_seed=cfg.fps_seed)
        return float(loss.data)

    loss, _, _ = pair_loss(net, pair, weights, lam, fps_seed=cfg.fps_seed)
    grads = backward(loss)

    params = net.parameters()
    by_family = {}
    for name, p in params.items():
        by_family.setdefault(parameter_family(name), []).append(p)

    rng = np.random.default_rng(cfg.seed)
    report = {}
    for family, tensors in sorted(by_family.items()):
        sizes = np.array([t.data.size for t in tensors])
        total = int(sizes.sum())
        count = min(entries_per_family, total)
        chosen = rng.choice(total, size=count, replace=False)
        worst = 0.0
        bounds = np.cumsum(sizes)
        for flat in chosen:
            which = int(np.searchsorted(bounds, flat, side="right"))
            inner = int(flat - (bounds[which - 1] if which else 0))
            tensor = tensors[which]
            original = tensor.data.reshape(-1)[inner]
            tensor.data.reshape(-1)[inner] = original + _FD_STEP
            up = loss_value()
            tensor.data.reshape(-1)[inner] = original - _FD_STEP
            down = loss_value()
            tensor.data.reshape(-1)[inner] = original
            fd = (up - down) / (2 * _FD_STEP)
            grad_arr = grads.get(tensor)
            analytic = 0.0 if grad_arr is None else grad_arr.reshape(-1)[inner]
            rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-6)
            worst = max(worst, rel)
        report[family] = worst
    result = GradcheckReport(families=report)
    for line in result.lines():
        log(line)
    return result
