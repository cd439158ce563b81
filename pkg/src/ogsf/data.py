"""Scene-pair data: synthetic rigid scenes, binary persistence, resampling.

Sample files (little-endian): magic "OGSF", version u32 = 1, flags u32
(bit 0: ground-truth flow present, bit 1: occlusion labels present), n1 u32,
n2 u32, then float32 arrays in order: source positions (n1 x 3), source RGB
(n1 x 3), target positions (n2 x 3), target RGB (n2 x 3), optional flow
(n1 x 3), optional occlusion (n1 x 1, stored as 0.0 / 1.0).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import FormatError

SAMPLE_MAGIC = b"OGSF"
SAMPLE_VERSION = 1
_FLAG_FLOW = 1
_FLAG_OCC = 2

# Disjoint unit boxes for synthetic bodies are spaced this far apart along x.
_BODY_SPACING = 1.6


class DataError(ValueError):
    """A dataset cannot be used for the requested run (missing labels etc.)."""


@dataclass
class PointCloud:
    """Positions in meters (n x 3) plus per-point feature channels (n x d)."""

    positions: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3 or self.positions.shape[0] < 1:
            raise ValueError(f"PointCloud: positions must be (n, 3) with n >= 1, got {self.positions.shape}")
        if self.features.shape[0] != self.positions.shape[0]:
            raise ValueError("PointCloud: feature rows must match position rows")
        if not (np.isfinite(self.positions).all() and np.isfinite(self.features).all()):
            raise ValueError("PointCloud: values must be finite")

    def __len__(self):
        return self.positions.shape[0]


@dataclass
class ScenePair:
    """Source and target clouds plus optional per-source-point ground truth.

    gt_occ uses 1 for non-occluded and 0 for occluded. The occlusion slot also
    carries predicted probabilities when a pair stores inference output, so
    values are only required to lie in [0, 1]; losses enforce binary labels.
    """

    source: PointCloud
    target: PointCloud
    gt_flow: np.ndarray | None = None
    gt_occ: np.ndarray | None = None

    def __post_init__(self):
        n1 = len(self.source)
        if self.gt_flow is not None:
            self.gt_flow = np.asarray(self.gt_flow, dtype=np.float64)
            if self.gt_flow.shape != (n1, 3):
                raise ValueError(f"ScenePair: gt_flow must be ({n1}, 3), got {self.gt_flow.shape}")
        if self.gt_occ is not None:
            self.gt_occ = np.asarray(self.gt_occ, dtype=np.float64).reshape(-1)
            if self.gt_occ.shape != (n1,):
                raise ValueError(f"ScenePair: gt_occ must have {n1} entries, got {self.gt_occ.shape}")
            if self.gt_occ.min() < 0.0 or self.gt_occ.max() > 1.0:
                raise ValueError("ScenePair: gt_occ values must lie in [0, 1]")


@dataclass
class SynthConfig:
    """Knobs for the rigid-scene generator."""

    bodies: int = 2
    points_per_body: int = 256
    rotation_deg: float = 10.0
    translation: float = 0.25
    carve_fraction: float = 0.2
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.bodies < 1 or self.points_per_body < 1:
            raise ValueError("SynthConfig: need at least one body and one point per body")
        if not 0.0 <= self.carve_fraction < 1.0:
            raise ValueError(f"SynthConfig: carve_fraction must be in [0, 1), got {self.carve_fraction}")
        if self.noise_sigma < 0:
            raise ValueError("SynthConfig: noise_sigma must be nonnegative")


def _quantize(a):
    """Round to float32-representable values, kept as float64."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _rotation_matrix(angles_rad):
    ax, ay, az = angles_rad
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def synthesize_scene(config):
    """Generate a rigid multi-body scene pair with exact flow and occlusion labels.

    Bodies are uniform samples in disjoint unit boxes. The target applies a
    per-body rigid transform (about the box center) plus optional noise; the
    flow is the pre-noise displacement. Occlusion carves the target points
    nearest a random anchor out of each body and marks their source points 0.
    Positions are float32-representable so files keep them exactly; the flow
    satisfies source + flow == noiseless target bitwise.
    """
    rng = np.random.default_rng(config.seed)
    colors = []
    for _ in range(config.bodies):
        c = rng.uniform(0.05, 0.95, 3)
        while colors and min(float(np.abs(c - e).sum()) for e in colors) < 0.5:
            c = rng.uniform(0.05, 0.95, 3)
        colors.append(c)

    src_pos, src_rgb, flows, occ = [], [], [], []
    tgt_pos, tgt_rgb = [], []
    ppb = config.points_per_body
    carve_count = int(round(config.carve_fraction * ppb))
    for b in range(config.bodies):
        origin = np.array([b * _BODY_SPACING, 0.0, 0.0])
        p = _quantize(origin + rng.uniform(0.0, 1.0, (ppb, 3)))
        angles = np.deg2rad(rng.uniform(-config.rotation_deg, config.rotation_deg, 3))
        shift = rng.uniform(-config.translation, config.translation, 3)
        center = origin + 0.5
        moved = (p - center) @ _rotation_matrix(angles).T + center + shift
        q_clean = _quantize(moved)
        if config.noise_sigma > 0:
            q = _quantize(moved + rng.normal(0.0, config.noise_sigma, (ppb, 3)))
        else:
            q = q_clean
        body_occ = np.ones(ppb)
        keep = np.ones(ppb, dtype=bool)
        if carve_count > 0:
            anchor = q[rng.integers(ppb)]
            carved = np.argsort(np.linalg.norm(q - anchor, axis=1), kind="stable")[:carve_count]
            keep[carved] = False
            body_occ[carved] = 0.0
        src_pos.append(p)
        src_rgb.append(np.tile(_quantize(colors[b]), (ppb, 1)))
        flows.append(q_clean - p)
        occ.append(body_occ)
        tgt_pos.append(q[keep])
        tgt_rgb.append(np.tile(_quantize(colors[b]), (int(keep.sum()), 1)))

    source = PointCloud(np.concatenate(src_pos), np.concatenate(src_rgb))
    target = PointCloud(np.concatenate(tgt_pos), np.concatenate(tgt_rgb))
    return ScenePair(source=source, target=target,
                     gt_flow=np.concatenate(flows), gt_occ=np.concatenate(occ))


def resample_fixed(pair, n, rng_seed=0):
    """Uniform fixed-count subsample of both clouds, without replacement.

    Ground truth follows the source selection. Deterministic given the seed.
    """
    n1, n2 = len(pair.source), len(pair.target)
    if n > min(n1, n2) or n < 1:
        raise ValueError(f"resample_fixed: n={n} out of range for clouds of {n1} and {n2} points")
    rng = np.random.default_rng(rng_seed)
    src_sel = rng.choice(n1, size=n, replace=False)
    tgt_sel = rng.choice(n2, size=n, replace=False)
    return ScenePair(
        source=PointCloud(pair.source.positions[src_sel], pair.source.features[src_sel]),
        target=PointCloud(pair.target.positions[tgt_sel], pair.target.features[tgt_sel]),
        gt_flow=None if pair.gt_flow is None else pair.gt_flow[src_sel],
        gt_occ=None if pair.gt_occ is None else pair.gt_occ[src_sel],
    )


def save_sample(pair, path):
    """Write a ScenePair to `path`; arrays are stored as float32."""
    arrays = [pair.source.positions, pair.source.features,
              pair.target.positions, pair.target.features]
    flags = 0
    if pair.gt_flow is not None:
        flags |= _FLAG_FLOW
        arrays.append(pair.gt_flow)
    if pair.gt_occ is not None:
        flags |= _FLAG_OCC
        arrays.append(pair.gt_occ.reshape(-1, 1))
    if not all(np.isfinite(a).all() for a in arrays):
        raise ValueError("save_sample: values must be finite")
    with open(path, "wb") as fh:
        fh.write(SAMPLE_MAGIC)
        fh.write(struct.pack("<IIII", SAMPLE_VERSION, flags, len(pair.source), len(pair.target)))
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_sample(path):
    """Read a ScenePair back; rejects bad magic/version and truncated payloads."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SAMPLE_MAGIC:
        raise FormatError(f"sample: bad magic {blob[:4]!r}, expected {SAMPLE_MAGIC!r}")
    if len(blob) < 20:
        raise FormatError(f"sample: truncated header, expected 20 bytes, have {len(blob)}")
    version, flags, n1, n2 = struct.unpack_from("<IIII", blob, 4)
    if version != SAMPLE_VERSION:
        raise FormatError(f"sample: unsupported version {version}")
    sizes = [(n1, 3), (n1, 3), (n2, 3), (n2, 3)]
    if flags & _FLAG_FLOW:
        sizes.append((n1, 3))
    if flags & _FLAG_OCC:
        sizes.append((n1, 1))
    expected = 20 + 4 * sum(r * c for r, c in sizes)
    if len(blob) != expected:
        raise FormatError(f"sample: truncated payload, expected {expected} bytes, have {len(blob)}")
    offset = 20
    arrays = []
    for rows, cols in sizes:
        count = rows * cols
        arrays.append(np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
                      .astype(np.float64).reshape(rows, cols))
        offset += 4 * count
    source = PointCloud(arrays[0], arrays[1])
    target = PointCloud(arrays[2], arrays[3])
    gt_flow = arrays[4] if flags & _FLAG_FLOW else None
    gt_occ = arrays[-1].reshape(-1) if flags & _FLAG_OCC else None
    return ScenePair(source=source, target=target, gt_flow=gt_flow, gt_occ=gt_occ)


def write_manifest(directory, names, filename="manifest.txt"):
    """List sample files, one relative path per line. Returns the manifest path."""
    directory = Path(directory)
    path = directory / filename
    path.write_text("".join(f"{name}\n" for name in names))
    return path


def read_manifest(path):
    """Resolve the listed sample paths relative to the manifest location."""
    path = Path(path)
    base = path.parent
    lines = [line.strip() for line in path.read_text().splitlines()]
    return [base / line for line in lines if line]


def export_ply(path, source_positions, target_positions, warped_positions,
               occlusion, threshold=0.5):
    """ASCII point export: source (red), target (blue), source+flow colored by
    occlusion (occluded black, non-occluded red). Rows: n1 + n2 + n1."""
    source_positions = np.asarray(source_positions, dtype=np.float64)
    target_positions = np.asarray(target_positions, dtype=np.float64)
    warped_positions = np.asarray(warped_positions, dtype=np.float64)
    occlusion = np.asarray(occlusion, dtype=np.float64).reshape(-1)
    n = source_positions.shape[0] + target_positions.shape[0] + warped_positions.shape[0]
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {n}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for p in source_positions:
            fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} 255 0 0\n")
        for p in target_positions:
            fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} 0 0 255\n")
        for p, o in zip(warped_positions, occlusion):
            color = "255 0 0" if o >= threshold else "0 0 0"
            fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {color}\n")
