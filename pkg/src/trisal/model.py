"""Full network assembly, hybrid loss, the training loop, and inference."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .attention import ATTENTION_LEVELS, MultiModalEnhance
from .data import FrameRecord
from .encoder import EncoderConfig, build_streams
from .errors import ConfigError, InputError, TrainingDiverged
from .fusion import CoarseMapHead, Decoder, RefinementFusion, coarse_gate

MODALITY_ORDER = ("rgb", "flow", "depth")
LEVEL_WEIGHTS = (1.0, 0.5, 0.25, 0.125, 0.0625)  # 1 / 2^(i-1), i = 1..5
IOU_EPS = 1.0


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    enabled_streams: tuple[str, ...] = ("rgb", "depth", "flow")
    main_modality: str = "rgb"
    fusion_mode: str = "progressive"          # "progressive" | "equal"
    mam_levels: tuple[int, ...] = (3, 4, 5)
    hmap_levels: tuple[int, ...] = (1, 2, 3)
    seed: int = 0

    def __post_init__(self):
        self.enabled_streams = tuple(self.enabled_streams)
        self.mam_levels = tuple(sorted(self.mam_levels))
        self.hmap_levels = tuple(sorted(self.hmap_levels))
        if self.main_modality not in self.enabled_streams:
            raise ConfigError(
                f"main modality '{self.main_modality}' is not an enabled stream")
        if len(self.enabled_streams) < 2:
            raise ConfigError("at least two streams are required for fusion")
        if not set(self.mam_levels) <= set(ATTENTION_LEVELS):
            raise ConfigError(f"mam_levels must be within {ATTENTION_LEVELS}")
        if not set(self.hmap_levels) <= {1, 2, 3, 4, 5}:
            raise ConfigError("hmap_levels must be within 1..5")
        if self.fusion_mode not in ("progressive", "equal"):
            raise ConfigError(f"unknown fusion mode '{self.fusion_mode}'")

    @property
    def auxiliaries(self) -> tuple[str, ...]:
        return tuple(m for m in MODALITY_ORDER
                     if m in self.enabled_streams and m != self.main_modality)


@dataclass
class ModelOutputs:
    """Per-level logits (level 1 first) and the coarse logit, all at the
    network input size."""

    level_logits: list[torch.Tensor]
    coarse_logit: torch.Tensor

    def saliency(self) -> list[torch.Tensor]:
        return [torch.sigmoid(lg) for lg in self.level_logits]

    def coarse(self) -> torch.Tensor:
        return torch.sigmoid(self.coarse_logit)

    def prediction(self) -> torch.Tensor:
        """The finest-level saliency map, used as the final output."""
        return torch.sigmoid(self.level_logits[0])


class SaliencyNet(nn.Module):
    """Three-stream (or two-stream) salient-object detector.

    Pipeline: per-modality encoding, cross-modal long-range enhancement on the
    deep levels, a coarse map fused from the deepest per-stream logits, gating
    of the shallow levels by that coarse map, per-level refinement fusion, and
    a top-down decoder with deep supervision.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        torch.manual_seed(config.seed)
        self.config = config
        aux = config.auxiliaries
        width = config.encoder.common_width
        self.streams = build_streams(config.encoder, config.enabled_streams)
        self.enhancers = nn.ModuleDict({
            str(lvl): MultiModalEnhance(width, aux, level=lvl)
            for lvl in config.mam_levels})
        self.coarse_head = CoarseMapHead(width, aux, config.fusion_mode)
        self.refiners = nn.ModuleList(
            [RefinementFusion(width, aux, config.fusion_mode) for _ in range(5)])
        self.decoder = Decoder(width)

    def _gather_inputs(self, rgb, depth, flow) -> dict[str, torch.Tensor]:
        given = {"rgb": rgb, "depth": depth, "flow": flow}
        inputs = {}
        for m in self.config.enabled_streams:
            if given[m] is None:
                raise InputError(f"enabled stream '{m}' received no input")
            inputs[m] = given[m]
        return inputs  # inputs for disabled streams are ignored

    def forward(self, rgb=None, depth=None, flow=None) -> ModelOutputs:
        cfg = self.config
        inputs = self._gather_inputs(rgb, depth, flow)
        out_size = inputs[cfg.main_modality].shape[-2:]
        pyramids = {m: self.streams[m](x) for m, x in inputs.items()}

        levels: list[dict[str, torch.Tensor]] = []
        for i in range(1, 6):
            feats = {m: pyramids[m][i - 1] for m in inputs}
            if i in cfg.mam_levels:
                y_main, y_aux = self.enhancers[str(i)](
                    feats[cfg.main_modality],
                    {n: feats[n] for n in cfg.auxiliaries})
                feats = {cfg.main_modality: y_main, **y_aux}
            levels.append(feats)

        deep = {"main": levels[4][cfg.main_modality]}
        deep.update({n: levels[4][n] for n in cfg.auxiliaries})
        bundle = self.coarse_head(deep)

        for i in cfg.hmap_levels:
            levels[i - 1] = {
                m: coarse_gate(f, bundle.coarse) for m, f in levels[i - 1].items()}

        fused = []
        for i in range(5):
            f, _ = self.refiners[i](
                levels[i][cfg.main_modality],
                {n: levels[i][n] for n in cfg.auxiliaries})
            fused.append(f)

        logits = self.decoder(fused, output_size=out_size)
        coarse = bundle.coarse
        if coarse.shape[-2:] != out_size:
            coarse = F.interpolate(coarse, size=out_size, mode="bilinear",
                                   align_corners=False)
        return ModelOutputs(level_logits=logits, coarse_logit=coarse)

    @torch.no_grad()
    def predict(self, rgb=None, depth=None, flow=None):
        """Saliency maps in [0, 1]: (five per-level maps, coarse map)."""
        out = self.forward(rgb=rgb, depth=depth, flow=flow)
        return out.saliency(), out.coarse()

    def backbone_parameters(self):
        for stream in self.streams.values():
            yield from stream.trunk.parameters()

    def head_parameters(self):
        backbone_ids = {id(p) for p in self.backbone_parameters()}
        for p in self.parameters():
            if id(p) not in backbone_ids:
                yield p

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


# --- loss ----------------------------------------------------------------------


@dataclass
class LossBreakdown:
    """Hybrid loss per supervised term. `bce_parts` / `iou_parts` hold the six
    terms in order: levels 1..5, then the coarse map."""

    per_level: tuple[torch.Tensor, ...]
    coarse: torch.Tensor
    bce_parts: tuple[torch.Tensor, ...]
    iou_parts: tuple[torch.Tensor, ...]
    total: torch.Tensor


def soft_iou_loss(logits: torch.Tensor, target: torch.Tensor,
                  eps: float = IOU_EPS) -> torch.Tensor:
    """1 - (sum p*g + eps) / (sum p + sum g - sum p*g + eps), per sample."""
    p = torch.sigmoid(logits)
    inter = (p * target).sum(dim=(1, 2, 3))
    union = p.sum(dim=(1, 2, 3)) + target.sum(dim=(1, 2, 3)) - inter
    return (1.0 - (inter + eps) / (union + eps)).mean()


def _hybrid_term(logits, target):
    bce = F.binary_cross_entropy_with_logits(logits, target)
    iou = soft_iou_loss(logits, target)
    return bce, iou


def compute_loss(outputs: ModelOutputs, gt: torch.Tensor) -> LossBreakdown:
    """Weighted deep-supervision loss: sum_i (1/2^(i-1)) * l(S_i, G) + l(CM, G)
    with l = mean BCE + soft IoU."""
    if gt.min() < 0 or gt.max() > 1:
        raise ValueError("ground truth must lie in [0, 1]")
    per_level, bce_parts, iou_parts = [], [], []
    for lg in outputs.level_logits:
        bce, iou = _hybrid_term(lg, gt)
        per_level.append(bce + iou)
        bce_parts.append(bce)
        iou_parts.append(iou)
    coarse_bce, coarse_iou = _hybrid_term(outputs.coarse_logit, gt)
    coarse = coarse_bce + coarse_iou
    bce_parts.append(coarse_bce)
    iou_parts.append(coarse_iou)
    total = coarse
    for w, term in zip(LEVEL_WEIGHTS, per_level):
        total = total + w * term
    return LossBreakdown(
        per_level=tuple(per_level), coarse=coarse,
        bce_parts=tuple(bce_parts), iou_parts=tuple(iou_parts), total=total)


# --- training ---------------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 4
    lr_backbone: float = 1e-4
    lr_head: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    augment: bool = True
    crop_min_ratio: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.lr_backbone <= 0 or self.lr_head <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0 < self.crop_min_ratio <= 1:
            raise ConfigError("crop_min_ratio must lie in (0, 1]")


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0


def frame_to_tensors(record: FrameRecord) -> dict[str, torch.Tensor]:
    """(C, H, W) float tensors for one frame, depth/gt single-channel."""
    return {
        "rgb": torch.from_numpy(record.rgb).permute(2, 0, 1).float(),
        "depth": torch.from_numpy(record.depth).unsqueeze(0).float(),
        "flow": torch.from_numpy(record.flow_vis).permute(2, 0, 1).float(),
        "gt": torch.from_numpy(record.gt).unsqueeze(0).float(),
    }


def sample_augmentation(generator: torch.Generator, h: int, w: int,
                        min_ratio: float) -> tuple[bool, tuple[int, int, int, int]]:
    """Draws one flip decision and crop box, shared by all modalities."""
    flip = bool(torch.randint(0, 2, (1,), generator=generator).item())
    ratio = min_ratio + (1.0 - min_ratio) * torch.rand(1, generator=generator).item()
    ch = max(1, round(h * ratio))
    cw = max(1, round(w * ratio))
    top = int(torch.randint(0, h - ch + 1, (1,), generator=generator).item())
    left = int(torch.randint(0, w - cw + 1, (1,), generator=generator).item())
    return flip, (top, left, ch, cw)


def apply_augmentation(t: torch.Tensor, flip: bool,
                       box: tuple[int, int, int, int],
                       out_size: tuple[int, int], is_mask: bool) -> torch.Tensor:
    """Crop, resize to `out_size`, and optionally flip one (C, H, W) tensor.
    Masks are resized with nearest neighbor to stay binary."""
    top, left, ch, cw = box
    t = t[:, top:top + ch, left:left + cw]
    if t.shape[-2:] != tuple(out_size):
        mode = "nearest" if is_mask else "bilinear"
        kwargs = {} if is_mask else {"align_corners": False}
        t = F.interpolate(t.unsqueeze(0), size=out_size, mode=mode, **kwargs).squeeze(0)
    if flip:
        t = torch.flip(t, dims=[-1])
    return t


def _build_batch(frames: list[dict[str, torch.Tensor]], indices,
                 out_size, augment: bool, min_ratio: float,
                 generator: torch.Generator) -> dict[str, torch.Tensor]:
    batch: dict[str, list[torch.Tensor]] = {k: [] for k in ("rgb", "depth", "flow", "gt")}
    for idx in indices:
        item = frames[int(idx)]
        h, w = item["gt"].shape[-2:]
        if augment:
            flip, box = sample_augmentation(generator, h, w, min_ratio)
        else:
            flip, box = False, (0, 0, h, w)
        for key in batch:
            batch[key].append(apply_augmentation(
                item[key], flip, box, out_size, is_mask=(key == "gt")))
    return {k: torch.stack(v) for k, v in batch.items()}


def train(records: list[FrameRecord], model_config: ModelConfig,
          train_config: TrainConfig,
          model: SaliencyNet | None = None) -> tuple[SaliencyNet, list[dict]]:
    """Momentum-SGD training with two parameter groups (trunk vs the rest).

    Deterministic for fixed seeds in a single process. Returns the trained
    model and one log record per step (step, total, and per-term losses).
    Raises TrainingDiverged when the loss turns non-finite.
    """
    if not records:
        raise ConfigError("training requires a nonempty record list")
    torch.manual_seed(train_config.seed)
    if model is None:
        model = SaliencyNet(model_config)
    model.train()
    cfg = model_config
    optimizer = torch.optim.SGD(
        [
            {"params": list(model.backbone_parameters()),
             "lr": train_config.lr_backbone},
            {"params": list(model.head_parameters()), "lr": train_config.lr_head},
        ],
        momentum=train_config.momentum,
        weight_decay=train_config.weight_decay,
    )

    frames = [frame_to_tensors(r) for r in records]
    out_size = cfg.encoder.input_size
    generator = torch.Generator().manual_seed(train_config.seed)
    n = len(frames)
    state = TrainState()
    logs = []

    for step in range(train_config.steps):
        indices = torch.randint(0, n, (train_config.batch_size,), generator=generator)
        batch = _build_batch(frames, indices, out_size, train_config.augment,
                             train_config.crop_min_ratio, generator)
        inputs = {m: batch[m] for m in cfg.enabled_streams}
        outputs = model(**inputs)
        loss = compute_loss(outputs, batch["gt"])
        if not torch.isfinite(loss.total):
            raise TrainingDiverged(step)
        optimizer.zero_grad()
        loss.total.backward()
        optimizer.step()
        state.step = step + 1
        state.epoch = (step + 1) * train_config.batch_size // n
        logs.append({
            "step": step,
            "total": loss.total.item(),
            "coarse": loss.coarse.item(),
            "levels": [t.item() for t in loss.per_level],
            "bce": [t.item() for t in loss.bce_parts],
            "iou": [t.item() for t in loss.iou_parts],
        })
    return model, logs


def write_train_log(logs: list[dict], path: str | Path) -> None:
    with open(path, "w") as f:
        for rec in logs:
            f.write(json.dumps(rec) + "\n")


# --- inference ---------------------------------------------------------------------


@torch.no_grad()
def infer(records: list[FrameRecord], model: SaliencyNet) -> list[np.ndarray]:
    """Frame-independent inference; returns the finest-level saliency map per
    frame, resized back to each frame's native resolution."""
    model.eval()
    cfg = model.config
    in_size = cfg.encoder.input_size
    maps = []
    for record in records:
        tensors = frame_to_tensors(record)
        inputs = {}
        for m in cfg.enabled_streams:
            t = tensors[m].unsqueeze(0)
            if t.shape[-2:] != tuple(in_size):
                t = F.interpolate(t, size=in_size, mode="bilinear", align_corners=False)
            inputs[m] = t
        out = model(**inputs)
        pred = out.prediction()
        h, w = record.resolution
        if pred.shape[-2:] != (h, w):
            pred = F.interpolate(pred, size=(h, w), mode="bilinear", align_corners=False)
        maps.append(pred.squeeze(0).squeeze(0).clamp(0, 1).numpy().astype(np.float32))
    return maps


# --- checkpoints ---------------------------------------------------------------------


def config_to_dict(config: ModelConfig) -> dict:
    return asdict(config)


def config_from_dict(raw: dict) -> ModelConfig:
    raw = dict(raw)
    enc = raw.pop("encoder")
    enc = EncoderConfig(
        scale_preset=enc["scale_preset"],
        input_size=tuple(enc["input_size"]),
        common_width=enc["common_width"],
        base_widths=tuple(enc["base_widths"]),
    )
    return ModelConfig(
        encoder=enc,
        enabled_streams=tuple(raw["enabled_streams"]),
        main_modality=raw["main_modality"],
        fusion_mode=raw["fusion_mode"],
        mam_levels=tuple(raw["mam_levels"]),
        hmap_levels=tuple(raw["hmap_levels"]),
        seed=raw["seed"],
    )


def save_checkpoint(path: str | Path, model: SaliencyNet, step: int = 0) -> None:
    torch.save({
        "config": config_to_dict(model.config),
        "state_dict": model.state_dict(),
        "step": step,
    }, path)


def load_checkpoint(path: str | Path) -> tuple[SaliencyNet, int]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    model = SaliencyNet(config_from_dict(payload["config"]))
    model.load_state_dict(payload["state_dict"])
    return model, int(payload.get("step", 0))
