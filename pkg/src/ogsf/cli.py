"""Command-line harness: ogsf <mode> --config <path>.

Modes: train, eval, infer, gradcheck, synth. Exit codes: 0 success,
2 config error, 3 data error, 4 numeric failure, 5 gradcheck failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, RunConfig
from .data import DataError, save_sample, synthesize_scene, write_manifest, SynthConfig
from .train import NumericError, run_eval, run_gradcheck, run_infer, run_train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_GRADCHECK = 5


def build_parser():
    parser = argparse.ArgumentParser(prog="ogsf",
                                     description="Occlusion-guided scene flow on point clouds")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in ("train", "eval", "infer", "gradcheck", "synth"):
        p = sub.add_parser(mode)
        p.add_argument("--config", required=True, help="key = value run config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--checkpoint", default=None, help="checkpoint to load")
        p.add_argument("--out", default=None, help="checkpoint/report/output destination")
        p.add_argument("--export-ply", action="store_true", default=None)
        p.add_argument("--fine-tune", action="store_true", default=None)
    return parser


def _overrides(args):
    out = {}
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if args.epochs is not None:
        out["epochs"] = str(args.epochs)
    if args.checkpoint is not None:
        out["checkpoint"] = args.checkpoint
    if args.export_ply:
        out["export_ply"] = "true"
    if args.fine_tune:
        out["fine_tune"] = "true"
    if args.out is not None:
        key = {"train": "checkpoint_out", "eval": "report_out"}.get(args.mode, "out_dir")
        out[key] = args.out
    return out


def run_synth(cfg, log=print):
    """Generate a directory of synthetic samples plus a manifest."""
    if cfg.out_dir is None:
        raise ConfigError("synth mode needs out_dir (or --out)")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    base = cfg.synth
    for i in range(cfg.synth_pairs):
        pair = synthesize_scene(SynthConfig(
            bodies=base.bodies, points_per_body=base.points_per_body,
            rotation_deg=base.rotation_deg, translation=base.translation,
            carve_fraction=base.carve_fraction, noise_sigma=base.noise_sigma,
            seed=cfg.seed + i))
        name = f"sample_{i:05d}.ogsf"
        save_sample(pair, out_dir / name)
        names.append(name)
    manifest = write_manifest(out_dir, names)
    log(f"wrote {len(names)} samples and {manifest}")
    return manifest


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config, overrides=_overrides(args))
        if args.mode == "train":
            run_train(cfg)
        elif args.mode == "eval":
            aggregate, _, sweep = run_eval(cfg)
            report_out = _report_out_path(args)
            if report_out is not None:
                _write_report(report_out, aggregate, sweep)
        elif args.mode == "infer":
            run_infer(cfg)
        elif args.mode == "gradcheck":
            report = run_gradcheck(cfg)
            if not report.passed:
                return EXIT_GRADCHECK
        elif args.mode == "synth":
            run_synth(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _report_out_path(args):
    return Path(args.out) if args.mode == "eval" and args.out else None


def _write_report(path, aggregate, sweep):
    import json

    payload = {"aggregate": aggregate.to_dict(),
               "outlier_sweep": {f"{t:.1f}": v for t, v in sweep.items()}}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


if __name__ == "__main__":
    sys.exit(main())
