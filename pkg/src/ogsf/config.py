"""Plain key = value text configs shared by the network and the run harness."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthConfig
from .network import NetworkConfig


class ConfigError(ValueError):
    """A config file or value cannot be used."""


def parse_config_text(text):
    """Parse `key = value` lines into a {str: str} map. '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        out[key] = value.strip()
    return out


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def _convert(key, raw, kind):
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int_list":
            return tuple(int(part) for part in raw.replace(",", " ").split())
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None


def get(mapping, key, kind, default=None):
    """Typed lookup; kind is int, float, bool, str, or 'int_list'."""
    if key not in mapping:
        return default
    return _convert(key, mapping[key], kind)


_NETWORK_KEYS = {
    "level_counts": "int_list",
    "feature_dims": "int_list",
    "cost_volume_dims": "int_list",
    "k_neighbors": int,
    "k_upsample": int,
    "leaky_slope": float,
    "weight_mlp_hidden": int,
    "mask_cost_volume": bool,
    "seed": int,
}

_SYNTH_KEYS = {
    "bodies": int,
    "points_per_body": int,
    "rotation_deg": float,
    "translation": float,
    "carve_fraction": float,
    "noise_sigma": float,
}


def network_config_from(mapping):
    """Build a NetworkConfig from config keys, leaving absent ones at defaults."""
    kwargs = {}
    for key, kind in _NETWORK_KEYS.items():
        value = get(mapping, key, kind)
        if value is not None:
            kwargs[key] = value
    try:
        return NetworkConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def synth_config_from(mapping, seed):
    kwargs = {"seed": seed}
    for key, kind in _SYNTH_KEYS.items():
        value = get(mapping, key, kind)
        if value is not None:
            kwargs[key] = value
    try:
        return SynthConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class RunConfig:
    """Everything a train / eval / infer / gradcheck / synth run needs.

    Learning-rate defaults: 0.001 decayed by 0.85 every 10 epochs, with the
    decay factor dropping to 0.8 from epoch 75 on. The occlusion-loss balance
    ramps 0.3 -> 0.6 linearly over the first 45 epochs.
    """

    network: NetworkConfig = field(default_factory=NetworkConfig)
    manifest: Path | None = None
    val_manifest: Path | None = None
    checkpoint_in: Path | None = None
    checkpoint_out: Path | None = None
    epochs: int = 120
    batch_size: int = 4
    learning_rate: float = 0.001
    lr_decay: float = 0.85
    lr_decay_interval: int = 10
    lr_late_factor: float = 0.8
    lr_late_start: int = 75
    lambda_start: float = 0.3
    lambda_end: float = 0.6
    lambda_ramp_epochs: int = 45
    seed: int = 0
    fine_tune: bool = False
    resample_points: int | None = None
    fps_seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    synth_pairs: int = 1
    out_dir: Path | None = None
    export_ply: bool = False

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr_decay_interval", "lambda_ramp_epochs", "synth_pairs"):
            if getattr(self, name) < (0 if name == "epochs" else 1):
                raise ConfigError(f"RunConfig: {name} must be positive, got {getattr(self, name)}")
        for name in ("learning_rate", "lr_decay", "lr_late_factor", "lambda_start", "lambda_end"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"RunConfig: {name} must be positive, got {getattr(self, name)}")

    @classmethod
    def from_file(cls, path, overrides=None):
        """Load a run config; a `network_config = path` key redirects the
        network keys to a second file, otherwise they share this one."""
        mapping = load_config(path)
        mapping.update(overrides or {})
        base = Path(path).parent

        def as_path(key):
            value = mapping.get(key)
            if value in (None, ""):
                return None
            p = Path(value)
            return p if p.is_absolute() else base / p

        net_ref = as_path("network_config")
        net_mapping = load_config(net_ref) if net_ref else mapping
        seed = get(mapping, "seed", int, 0)
        cfg = cls(
            network=network_config_from(net_mapping),
            manifest=as_path("manifest"),
            val_manifest=as_path("val_manifest"),
            checkpoint_in=as_path("checkpoint"),
            checkpoint_out=as_path("checkpoint_out"),
            epochs=get(mapping, "epochs", int, 120),
            batch_size=get(mapping, "batch_size", int, 4),
            learning_rate=get(mapping, "learning_rate", float, 0.001),
            lr_decay=get(mapping, "lr_decay", float, 0.85),
            lr_decay_interval=get(mapping, "lr_decay_interval", int, 10),
            lr_late_factor=get(mapping, "lr_late_factor", float, 0.8),
            lr_late_start=get(mapping, "lr_late_start", int, 75),
            lambda_start=get(mapping, "lambda_start", float, 0.3),
            lambda_end=get(mapping, "lambda_end", float, 0.6),
            lambda_ramp_epochs=get(mapping, "lambda_ramp_epochs", int, 45),
            seed=seed,
            fine_tune=get(mapping, "fine_tune", bool, False),
            resample_points=get(mapping, "resample_points", int),
            fps_seed=get(mapping, "fps_seed", int, 0),
            synth=synth_config_from(mapping, seed),
            synth_pairs=get(mapping, "synth_pairs", int, 1),
            out_dir=as_path("out_dir"),
            export_ply=get(mapping, "export_ply", bool, False),
        )
        return cfg
