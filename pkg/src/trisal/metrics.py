"""Saliency evaluation: MAE, thresholded F-measure curves, structure measure,
and directory-level aggregation into per-sequence and dataset reports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyGroundTruth, PairingError, ShapeError

BETA_SQUARED = 0.3
N_THRESHOLDS = 256
S_ALPHA = 0.5
_EPS = np.spacing(1)


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return pred, gt.astype(bool)


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute per-pixel difference."""
    pred, gt = _check_pair(pred, gt)
    return float(np.abs(pred - gt.astype(np.float64)).mean())


def f_measure_curve(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """F-measure at the 256 thresholds k/255, precision weighted by beta^2=0.3.

    Binarization is `pred >= threshold`; degenerate precision/recall gives 0.
    Raises EmptyGroundTruth for all-background masks (callers skip the frame).
    """
    pred, gt = _check_pair(pred, gt)
    n_fg = int(gt.sum())
    if n_fg == 0:
        raise EmptyGroundTruth("all-zero ground truth has no F-measure")
    curve = np.zeros(N_THRESHOLDS, dtype=np.float64)
    for k in range(N_THRESHOLDS):
        mask = pred >= (k / 255.0)
        n_pred = int(mask.sum())
        if n_pred == 0:
            continue
        tp = int((mask & gt).sum())
        precision = tp / n_pred
        recall = tp / n_fg
        denom = BETA_SQUARED * precision + recall
        if denom > 0:
            curve[k] = (1.0 + BETA_SQUARED) * precision * recall / denom
    return curve


# --- structure measure -----------------------------------------------------------

def _object_score(values: np.ndarray) -> float:
    x = values.mean()
    sigma = values.std()
    return 2.0 * x / (x * x + 1.0 + sigma + _EPS)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    fg = pred[gt]
    bg = 1.0 - pred[~gt]
    u = gt.mean()
    return u * _object_score(fg) + (1.0 - u) * _object_score(bg)


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = pred.shape
    n = h * w
    x, y = pred.mean(), gt.mean()
    sigma_x = ((pred - x) ** 2).sum() / (n - 1 + _EPS)
    sigma_y = ((gt - y) ** 2).sum() / (n - 1 + _EPS)
    sigma_xy = ((pred - x) * (gt - y)).sum() / (n - 1 + _EPS)
    a = 4.0 * x * y * sigma_xy
    b = (x * x + y * y) * (sigma_x + sigma_y)
    if a != 0:
        return a / (b + _EPS)
    return 1.0 if b == 0 else 0.0


def _gt_centroid(gt: np.ndarray) -> tuple[int, int]:
    h, w = gt.shape
    total = gt.sum()
    if total == 0:
        return h // 2, w // 2
    ys, xs = np.nonzero(gt)
    return int(round(ys.mean())), int(round(xs.mean()))


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    cy, cx = _gt_centroid(gt)
    cy, cx = cy + 1, cx + 1  # split sizes counted inclusively of the centroid
    area = h * w
    weights = [
        cx * cy / area,
        (w - cx) * cy / area,
        cx * (h - cy) / area,
    ]
    weights.append(1.0 - sum(weights))
    blocks = [
        (slice(0, cy), slice(0, cx)),
        (slice(0, cy), slice(cx, w)),
        (slice(cy, h), slice(0, cx)),
        (slice(cy, h), slice(cx, w)),
    ]
    score = 0.0
    for wgt, (rows, cols) in zip(weights, blocks):
        p = pred[rows, cols]
        g = gt[rows, cols].astype(np.float64)
        if p.size:
            score += wgt * _ssim(p, g)
    return score


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = S_ALPHA) -> float:
    """Structure measure: alpha * object similarity + (1-alpha) * region
    similarity over the 4-way centroid split; clamped to [0, 1].

    Degenerate masks follow the reference convention: all-background GT scores
    1 - mean(pred), all-foreground GT scores mean(pred).
    """
    pred, gt = _check_pair(pred, gt)
    y = gt.mean()
    if y == 0:
        score = 1.0 - pred.mean()
    elif y == 1:
        score = float(pred.mean())
    else:
        score = alpha * _s_object(pred, gt) + (1.0 - alpha) * _s_region(pred, gt)
    return float(min(max(score, 0.0), 1.0))


# --- aggregation --------------------------------------------------------------------


@dataclass
class FrameMetrics:
    mae: float
    s_measure: float
    f_curve: np.ndarray | None  # None when GT was empty


@dataclass
class SequenceMetrics:
    frames: int
    mae: float
    s_measure: float
    f_max: float  # max of the sequence-mean curve; nan when no scored frame


@dataclass
class EvalReport:
    per_sequence: dict[str, SequenceMetrics]
    mae: float
    s_measure: float
    f_max: float
    frames_total: int
    frames_scored_f: int


def frame_metrics(pred: np.ndarray, gt: np.ndarray) -> FrameMetrics:
    try:
        curve = f_measure_curve(pred, gt)
    except EmptyGroundTruth:
        curve = None
    return FrameMetrics(mae=mae(pred, gt), s_measure=s_measure(pred, gt),
                        f_curve=curve)


def _mean_curve(curves: list[np.ndarray]) -> np.ndarray | None:
    if not curves:
        return None
    return np.mean(np.stack(curves), axis=0)


def aggregate(per_frame: dict[str, list[FrameMetrics]],
              per_frame_max: bool = False) -> EvalReport:
    """Reduces per-frame metrics to sequence and dataset scores.

    The dataset F is the max of the mean curve over all non-empty-GT frames;
    `per_frame_max` instead averages per-frame curve maxima (for comparison
    only). MAE and S average over every frame.
    """
    per_sequence = {}
    all_mae, all_s, all_curves = [], [], []
    for seq, frames in sorted(per_frame.items()):
        seq_mae = float(np.mean([f.mae for f in frames]))
        seq_s = float(np.mean([f.s_measure for f in frames]))
        curves = [f.f_curve for f in frames if f.f_curve is not None]
        seq_curve = _mean_curve(curves)
        seq_f = float(seq_curve.max()) if seq_curve is not None else float("nan")
        per_sequence[seq] = SequenceMetrics(
            frames=len(frames), mae=seq_mae, s_measure=seq_s, f_max=seq_f)
        all_mae += [f.mae for f in frames]
        all_s += [f.s_measure for f in frames]
        all_curves += curves
    if per_frame_max:
        f_max = float(np.mean([c.max() for c in all_curves])) if all_curves else float("nan")
    else:
        mean_curve = _mean_curve(all_curves)
        f_max = float(mean_curve.max()) if mean_curve is not None else float("nan")
    return EvalReport(
        per_sequence=per_sequence,
        mae=float(np.mean(all_mae)),
        s_measure=float(np.mean(all_s)),
        f_max=f_max,
        frames_total=len(all_mae),
        frames_scored_f=len(all_curves),
    )


# --- directory evaluation --------------------------------------------------------------


def _load_pred(path: Path, size: tuple[int, int]) -> np.ndarray:
    with Image.open(path) as img:
        img = img.convert("L")
        if (img.height, img.width) != size:
            img = img.resize((size[1], size[0]), Image.BILINEAR)
        return np.asarray(img, dtype=np.float64) / 255.0


def _load_gt(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return (np.asarray(img.convert("L")) >= 128).astype(np.uint8)


def _gt_frames(gt_dir: Path) -> dict[str, dict[str, Path]]:
    """Maps sequence -> {frame stem -> gt path}. Accepts either a directory of
    `<seq>/*.png` mask folders or a dataset root with `<seq>/gt/*.png`."""
    sequences = {}
    for seq_dir in sorted(p for p in gt_dir.iterdir() if p.is_dir()):
        mask_dir = seq_dir / "gt" if (seq_dir / "gt").is_dir() else seq_dir
        frames = {p.stem: p for p in sorted(mask_dir.glob("*.png"))}
        if frames:
            sequences[seq_dir.name] = frames
    return sequences


def evaluate(pred_dir: str | Path, gt_dir: str | Path,
             per_frame_max: bool = False) -> EvalReport:
    """Evaluates a directory of predictions against ground-truth masks.

    Predictions live in `<pred_dir>/<seq>/<frame>.png` and must pair with the
    ground-truth frame set exactly; offenders are listed in PairingError.
    Predictions are bilinearly resized to the GT resolution first.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    sequences = _gt_frames(gt_dir)
    if not sequences:
        raise PairingError(f"no ground-truth sequences under {gt_dir}")
    per_frame: dict[str, list[FrameMetrics]] = {}
    problems = []
    for seq, gt_frames in sequences.items():
        pred_seq = pred_dir / seq
        pred_frames = {p.stem: p for p in sorted(pred_seq.glob("*.png"))} \
            if pred_seq.is_dir() else {}
        missing = sorted(set(gt_frames) - set(pred_frames))
        extra = sorted(set(pred_frames) - set(gt_frames))
        if missing:
            problems.append(f"{seq}: missing predictions {missing}")
        if extra:
            problems.append(f"{seq}: unmatched predictions {extra}")
        if missing or extra:
            continue
        metrics = []
        for stem, gt_path in gt_frames.items():
            gt = _load_gt(gt_path)
            pred = _load_pred(pred_frames[stem], gt.shape)
            metrics.append(frame_metrics(pred, gt))
        per_frame[seq] = metrics
    if problems:
        raise PairingError("; ".join(problems))
    return aggregate(per_frame, per_frame_max=per_frame_max)


def write_report(report: EvalReport, out_dir: str | Path) -> tuple[Path, Path]:
    """Writes per-sequence rows as CSV and the dataset triple as JSON."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "per_sequence.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sequence", "frames", "f_max", "s_measure", "mae"])
        for seq, m in report.per_sequence.items():
            writer.writerow([seq, m.frames, f"{m.f_max:.6f}",
                             f"{m.s_measure:.6f}", f"{m.mae:.6f}"])
    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as f:
        json.dump({
            "f_max": report.f_max,
            "s_measure": report.s_measure,
            "mae": report.mae,
            "frames": report.frames_total,
            "frames_scored_f": report.frames_scored_f,
        }, f, indent=2)
        f.write("\n")
    return csv_path, summary_path
