"""Dataset handling: frame loading, synthetic fixtures, fixation-to-saliency
conversion, split manifests, and dataset statistics.

Directory layout per sequence: ``<root>/<seq>/rgb/%06d.png``, ``depth/%06d.png``
(8- or 16-bit grayscale), ``flow/%06d.png`` (3-channel), ``gt/%06d.png``
(8-bit grayscale, binarized at 128 on load).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .errors import (
    AlignmentError,
    AttributeFileError,
    ConfigError,
    EmptyDataset,
    ManifestError,
    MissingModality,
    SplitError,
)

MODALITIES = ("rgb", "depth", "flow", "gt")
GT_THRESHOLD = 128  # of 255, midpoint binarization

ATTRIBUTE_CODES = frozenset({
    "HO", "OCC", "OV", "FM", "MB", "DEF", "SC",
    "SV", "AC", "BC", "BO", "SO", "IN", "OUT",
})

# Canonical split totals used when a manifest declares `canonical: rdvs`.
CANONICAL_RDVS = {
    "train": (32, 2208),
    "test": (27, 1879),
}

CENTER_BIAS_GRID = 256


@dataclass
class FrameRecord:
    """One time step: RGB frame, depth map, rendered flow, GT mask, metadata."""

    sequence_id: str
    frame_index: int
    rgb: np.ndarray        # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray      # (H, W) float32 in [0, 1]
    flow_vis: np.ndarray   # (H, W, 3) float32 in [0, 1]
    gt: np.ndarray         # (H, W) uint8 in {0, 1}

    @property
    def resolution(self) -> tuple[int, int]:
        return self.gt.shape[0], self.gt.shape[1]


@dataclass
class FixationField:
    """Sparse gaze points, (x, y) pixel coordinates on an (H, W) grid."""

    points: list[tuple[float, float]]
    resolution: tuple[int, int]

    def __post_init__(self):
        h, w = self.resolution
        for x, y in self.points:
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"fixation ({x}, {y}) outside {w}x{h} frame")


@dataclass
class SplitManifest:
    train_sequences: list[str]
    test_sequences: list[str]
    frame_counts: dict[str, int]
    canonical: str | None = None


@dataclass
class AttributeRecord:
    sequence_id: str
    attributes: frozenset[str]

    def __post_init__(self):
        unknown = self.attributes - ATTRIBUTE_CODES
        if unknown:
            raise AttributeFileError(
                f"{self.sequence_id}: unknown attribute codes {sorted(unknown)}")
        if {"IN", "OUT"} <= self.attributes:
            raise AttributeFileError(
                f"{self.sequence_id}: IN and OUT are mutually exclusive")


@dataclass
class FixtureConfig:
    """Parameters for the synthetic moving-object dataset."""

    clips: int = 4
    frames_per_clip: int = 8
    height: int = 64
    width: int = 64
    speed: int = 2  # object displacement in pixels per frame

    def __post_init__(self):
        if self.height < 32 or self.width < 32:
            raise ConfigError(
                f"fixture resolution {self.height}x{self.width} below 32x32")
        if self.clips < 1 or self.frames_per_clip < 1:
            raise ConfigError("fixtures need at least one clip and one frame")
        if self.speed < 1:
            raise ConfigError("object speed must be >= 1 px/frame")


@dataclass
class DatasetStatistics:
    """Center-bias map plus object distance/size histograms."""

    center_bias: np.ndarray    # (256, 256) pixelwise mean of resized GT masks
    distance_counts: np.ndarray
    distance_edges: np.ndarray
    size_counts: np.ndarray
    size_edges: np.ndarray
    frames_total: int
    frames_with_object: int


# --- loading -----------------------------------------------------------------

def _read_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def _read_depth(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[..., 0]
    if arr.dtype == np.uint16:
        return arr.astype(np.float32) / 65535.0
    if arr.dtype == np.int32:  # PIL mode "I" carries 16-bit PNGs on some versions
        return arr.astype(np.float32) / 65535.0
    return arr.astype(np.float32) / 255.0


def _read_mask(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return (arr >= GT_THRESHOLD).astype(np.uint8)


def load_sequence(root: str | Path, sequence_id: str) -> list[FrameRecord]:
    """Loads one sequence's frames sorted by index.

    Raises MissingModality when any per-frame file is absent and AlignmentError
    when the four modalities of a frame disagree on resolution.
    """
    seq_dir = Path(root) / sequence_id
    if not seq_dir.is_dir():
        raise MissingModality(f"{sequence_id} (sequence directory not found)")
    indices: set[int] = set()
    for mod in MODALITIES:
        mod_dir = seq_dir / mod
        if mod_dir.is_dir():
            indices.update(int(p.stem) for p in mod_dir.glob("*.png"))
    if not indices:
        raise MissingModality(f"{sequence_id} (no frames found)")

    records = []
    for idx in sorted(indices):
        paths = {mod: seq_dir / mod / f"{idx:06d}.png" for mod in MODALITIES}
        for mod, p in paths.items():
            if not p.is_file():
                raise MissingModality(f"{sequence_id}/{idx:06d}_{mod}")
        rgb = _read_rgb(paths["rgb"])
        depth = _read_depth(paths["depth"])
        flow_vis = _read_rgb(paths["flow"])
        gt = _read_mask(paths["gt"])
        shapes = {"rgb": rgb.shape[:2], "depth": depth.shape,
                  "flow": flow_vis.shape[:2], "gt": gt.shape}
        if len(set(shapes.values())) != 1:
            raise AlignmentError(f"{sequence_id}/{idx:06d}: resolutions differ {shapes}")
        records.append(FrameRecord(sequence_id, idx, rgb, depth, flow_vis, gt))
    return records


def load_dataset(root: str | Path, sequence_ids: list[str]) -> list[FrameRecord]:
    records = []
    for seq in sequence_ids:
        records.extend(load_sequence(root, seq))
    return records


# --- fixation maps -------------------------------------------------------------

def fixations_to_saliency(field: FixationField, sigma: float) -> np.ndarray:
    """Sums a Gaussian kernel per fixation and normalizes the peak to 1.

    An empty fixation list yields an all-zero map.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    h, w = field.resolution
    out = np.zeros((h, w), dtype=np.float64)
    if not field.points:
        return out
    ys, xs = np.mgrid[0:h, 0:w]
    for x, y in field.points:
        out += np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2.0 * sigma * sigma))
    return out / out.max()


# --- synthetic fixtures --------------------------------------------------------

_PALETTE = (
    (0.90, 0.30, 0.20),
    (0.20, 0.85, 0.30),
    (0.25, 0.45, 0.95),
    (0.90, 0.80, 0.20),
    (0.80, 0.30, 0.85),
    (0.25, 0.85, 0.85),
)


def _direction_color(vx: float, vy: float) -> np.ndarray:
    """Maps a displacement direction to an RGB color (hue = angle)."""
    angle = math.atan2(vy, vx) % (2.0 * math.pi)
    hue6 = angle / (2.0 * math.pi) * 6.0
    k = int(hue6) % 6
    f = hue6 - int(hue6)
    q, t = 1.0 - f, f
    table = [(1, t, 0), (q, 1, 0), (0, 1, t), (0, q, 1), (t, 0, 1), (1, 0, q)]
    return np.array(table[k], dtype=np.float32)


def _object_mask(shape: str, cx: int, cy: int, radius: int,
                 h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    if shape == "circle":
        return ((xs - cx) ** 2 + (ys - cy) ** 2 <= radius ** 2)
    return (np.abs(xs - cx) <= radius) & (np.abs(ys - cy) <= radius)


def _save_gray(arr: np.ndarray, path: Path, bits: int = 8) -> None:
    if bits == 16:
        img = Image.fromarray((arr * 65535.0 + 0.5).astype(np.uint16))
    else:
        img = Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8))
    img.save(path)


def _save_rgb(arr: np.ndarray, path: Path) -> None:
    Image.fromarray((np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)).save(path)


def make_fixtures(root: str | Path, config: FixtureConfig, seed: int) -> Path:
    """Writes a synthetic dataset of moving-object clips under `root`.

    Each clip shows one rigid shape translating at `config.speed` px/frame and
    bouncing off the frame margins. Depth separates object from background,
    the flow image colors the object by its displacement direction, and GT is
    the exact object mask. Deterministic for a fixed seed; also writes a
    `manifest.yaml` listing every clip in the train split.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    h, w = config.height, config.width
    radius = max(4, min(h, w) // 8)
    frame_counts: dict[str, int] = {}

    for clip in range(config.clips):
        rng = np.random.default_rng(np.random.SeedSequence([seed, clip]))
        seq_id = f"clip_{clip:03d}"
        seq_dir = root / seq_id
        for mod in MODALITIES:
            (seq_dir / mod).mkdir(parents=True, exist_ok=True)

        color = np.array(_PALETTE[clip % len(_PALETTE)], dtype=np.float32)
        shape = "circle" if clip % 2 == 0 else "square"
        # Static per-clip background: dark base, gentle gradient, coarse texture.
        ys, xs = np.mgrid[0:h, 0:w]
        texture = rng.uniform(0.0, 0.08, size=(h // 8 + 1, w // 8 + 1))
        texture = np.kron(texture, np.ones((8, 8)))[:h, :w]
        bg_rgb = np.stack([0.10 + 0.08 * xs / w + texture] * 3, axis=-1)
        bg_depth = 0.15 + 0.10 * ys / h
        margin = radius + config.speed + 1
        cx = int(rng.integers(margin, w - margin))
        cy = int(rng.integers(margin, h - margin))
        axis = int(rng.integers(0, 2))  # 0: horizontal motion, 1: vertical
        sign = 1 if rng.integers(0, 2) == 0 else -1
        vx, vy = (sign * config.speed, 0) if axis == 0 else (0, sign * config.speed)

        for t in range(config.frames_per_clip):
            mask = _object_mask(shape, cx, cy, radius, h, w)
            rgb = bg_rgb.copy()
            rgb[mask] = color
            depth = bg_depth.copy()
            depth[mask] = 0.85
            flow = np.full((h, w, 3), 0.5, dtype=np.float32)
            flow[mask] = _direction_color(vx, vy)

            _save_rgb(rgb, seq_dir / "rgb" / f"{t:06d}.png")
            _save_gray(depth, seq_dir / "depth" / f"{t:06d}.png", bits=16)
            _save_rgb(flow, seq_dir / "flow" / f"{t:06d}.png")
            _save_gray(mask.astype(np.float32), seq_dir / "gt" / f"{t:06d}.png")

            nx, ny = cx + vx, cy + vy
            if not (margin <= nx < w - margin):
                vx = -vx
                nx = cx + vx
            if not (margin <= ny < h - margin):
                vy = -vy
                ny = cy + vy
            cx, cy = nx, ny
        frame_counts[seq_id] = config.frames_per_clip

    manifest = {
        "train": {seq: n for seq, n in sorted(frame_counts.items())},
        "test": {},
    }
    with open(root / "manifest.yaml", "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=True)
    return root


# --- split manifests -----------------------------------------------------------

def load_split_manifest(path: str | Path) -> SplitManifest:
    """Parses and validates a split manifest.

    The manifest maps `train` and `test` to {sequence_id: frame_count}. A
    `canonical: rdvs` flag additionally enforces the published split totals.
    """
    path = Path(path)
    with open(path) as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict):
        raise ManifestError(f"{path}: manifest must be a mapping")
    canonical = raw.get("canonical")
    splits: dict[str, dict[str, int]] = {}
    for split in ("train", "test"):
        entry = raw.get(split, {}) or {}
        if not isinstance(entry, dict):
            raise ManifestError(f"{path}: '{split}' must map sequence ids to frame counts")
        counts = {}
        for seq, n in entry.items():
            if not isinstance(n, int) or n < 1:
                raise ManifestError(f"{path}: sequence '{seq}' has frame count {n!r} (< 1)")
            counts[str(seq)] = n
        splits[split] = counts

    overlap = set(splits["train"]) & set(splits["test"])
    if overlap:
        raise SplitError(f"{path}: sequences in both splits: {sorted(overlap)}")

    if canonical is not None:
        if canonical not in ("rdvs",):
            raise ManifestError(f"{path}: unknown canonical dataset '{canonical}'")
        for split, (n_seq, n_frames) in CANONICAL_RDVS.items():
            got_seq = len(splits[split])
            got_frames = sum(splits[split].values())
            if (got_seq, got_frames) != (n_seq, n_frames):
                raise ManifestError(
                    f"{path}: canonical '{canonical}' requires {n_seq} {split} "
                    f"sequences / {n_frames} frames, found {got_seq} / {got_frames}")

    frame_counts = {**splits["train"], **splits["test"]}
    return SplitManifest(
        train_sequences=sorted(splits["train"]),
        test_sequences=sorted(splits["test"]),
        frame_counts=frame_counts,
        canonical=canonical,
    )


# --- statistics ------------------------------------------------------------------

def _resize_mask(gt: np.ndarray, size: int) -> np.ndarray:
    img = Image.fromarray(gt.astype(np.float32), mode="F")
    return np.asarray(img.resize((size, size), Image.BILINEAR), dtype=np.float64)


def mask_centroid(gt: np.ndarray) -> tuple[float, float] | None:
    """Returns the (y, x) centroid of the foreground, or None when empty."""
    ys, xs = np.nonzero(gt)
    if ys.size == 0:
        return None
    return float(ys.mean()), float(xs.mean())


def dataset_statistics(records: list[FrameRecord], bins: int = 10) -> DatasetStatistics:
    """Computes center-bias and object distance/size distributions.

    The center-bias map is the pixelwise mean of all GT masks resized to a
    common 256x256 grid. Distance is centroid-to-center in pixels divided by
    half the image diagonal; size is foreground fraction. Frames with empty GT
    are excluded from both histograms but counted in the center-bias mean.
    """
    if not records:
        raise EmptyDataset("no frames given")
    bias = np.zeros((CENTER_BIAS_GRID, CENTER_BIAS_GRID), dtype=np.float64)
    distances, sizes = [], []
    for rec in records:
        bias += _resize_mask(rec.gt, CENTER_BIAS_GRID)
        centroid = mask_centroid(rec.gt)
        if centroid is None:
            continue
        h, w = rec.gt.shape
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        dist = math.hypot(centroid[0] - cy, centroid[1] - cx)
        distances.append(dist / (0.5 * math.hypot(h, w)))
        sizes.append(float(rec.gt.sum()) / (h * w))
    if not distances:
        raise EmptyDataset("every frame has an empty GT mask")
    dist_counts, dist_edges = np.histogram(distances, bins=bins, range=(0.0, 1.0))
    size_counts, size_edges = np.histogram(sizes, bins=bins, range=(0.0, 1.0))
    return DatasetStatistics(
        center_bias=bias / len(records),
        distance_counts=dist_counts,
        distance_edges=dist_edges,
        size_counts=size_counts,
        size_edges=size_edges,
        frames_total=len(records),
        frames_with_object=len(distances),
    )


def write_statistics_csv(stats: DatasetStatistics, out_dir: str | Path) -> list[Path]:
    """Writes the statistics bundle as CSV files; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = out_dir / "center_bias.csv"
    np.savetxt(path, stats.center_bias, delimiter=",", fmt="%.8f")
    written.append(path)

    for name, counts, edges in (
        ("distance_hist", stats.distance_counts, stats.distance_edges),
        ("size_hist", stats.size_counts, stats.size_edges),
    ):
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["bin_start", "bin_end", "count"])
            for i, c in enumerate(counts):
                writer.writerow([f"{edges[i]:.6f}", f"{edges[i + 1]:.6f}", int(c)])
        written.append(path)
    return written


# --- sequence attributes -----------------------------------------------------------

def read_attributes(path: str | Path) -> list[AttributeRecord]:
    """Reads a CSV of `sequence,attributes` rows, attributes `;`-separated."""
    records = []
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row or row[0].startswith("#"):
                continue
            seq = row[0].strip()
            codes = frozenset(
                c.strip() for c in (row[1] if len(row) > 1 else "").split(";") if c.strip())
            records.append(AttributeRecord(seq, codes))
    return records
