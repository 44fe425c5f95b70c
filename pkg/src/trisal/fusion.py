"""Feature interaction and fusion: two- and three-input interaction blocks,
per-level attentive refinement, coarse-map heads and gating of shallow
features, and the top-down decoder."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .attention import CoordinateAttention, SpatialAttention
from .encoder import ConvBNReLU
from .errors import ConfigError, ShapeError

FUSION_MODES = ("progressive", "equal")


class InteractionBlock(nn.Module):
    """Fuses two same-shape tensors through four elementwise interactions
    (aligned concatenation, product, maximum, difference) merged by a 3x3
    ConvBNReLU; output shape equals the input shape."""

    def __init__(self, channels: int):
        super().__init__()
        self.align = ConvBNReLU(2 * channels, channels)
        self.merge = ConvBNReLU(4 * channels, channels)

    def branches(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"inputs differ: {tuple(a.shape)} vs {tuple(b.shape)}")
        v_cat = self.align(torch.cat([a, b], dim=1))
        return v_cat, a * b, torch.maximum(a, b), a - b

    def forward(self, a, b):
        v_cat, v_mul, v_max, v_sub = self.branches(a, b)
        return self.merge(torch.cat([v_cat, v_mul, v_max, v_sub], dim=1))


class TriInteractionBlock(nn.Module):
    """Three-input interaction for equal (non-progressive) fusion; the
    difference branch aligns the pairwise differences."""

    def __init__(self, channels: int):
        super().__init__()
        self.align = ConvBNReLU(3 * channels, channels)
        self.diff = ConvBNReLU(3 * channels, channels)
        self.merge = ConvBNReLU(4 * channels, channels)

    def forward(self, a, b, c):
        if not (a.shape == b.shape == c.shape):
            raise ShapeError("equal fusion needs three same-shape inputs")
        v_cat = self.align(torch.cat([a, b, c], dim=1))
        v_mul = a * b * c
        v_max = torch.maximum(torch.maximum(a, b), c)
        v_sub = self.diff(torch.cat([a - b, b - c, a - c], dim=1))
        return self.merge(torch.cat([v_cat, v_mul, v_max, v_sub], dim=1))


@dataclass
class RefineTrace:
    """Intermediates of one refinement pass, keyed by role ('main' or an
    auxiliary name); cross-attention maps are keyed by auxiliary name."""

    adapted: dict[str, torch.Tensor]
    axis_att: dict[str, torch.Tensor]
    axis_cross: dict[str, torch.Tensor]
    stage1: dict[str, torch.Tensor]
    local_att: dict[str, torch.Tensor]
    local_cross: dict[str, torch.Tensor]
    stage2: dict[str, torch.Tensor]
    fused: torch.Tensor


class _FusionHead(nn.Module):
    """Merges one main and N refined auxiliary maps, progressively (auxiliaries
    first, then the main modality) or all at once."""

    def __init__(self, channels: int, n_aux: int, mode: str):
        super().__init__()
        if mode not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode '{mode}'")
        self.mode = mode
        self.n_aux = n_aux
        if n_aux == 1:
            self.fuse_main = InteractionBlock(channels)
        elif mode == "progressive":
            self.fuse_aux = InteractionBlock(channels)
            self.fuse_main = InteractionBlock(channels)
        else:
            self.fuse_all = TriInteractionBlock(channels)

    def forward(self, main, auxes: list[torch.Tensor]):
        if self.n_aux == 1:
            return self.fuse_main(main, auxes[0])
        if self.mode == "progressive":
            return self.fuse_main(main, self.fuse_aux(auxes[0], auxes[1]))
        return self.fuse_all(main, auxes[0], auxes[1])


class RefinementFusion(nn.Module):
    """Per-level refinement and fusion of one main and N auxiliary features.

    Both attention stages follow the same pattern: per-role attention maps, a
    self-gated copy, cross-modal maps from interacting the main map with each
    auxiliary map, residual refinement per role, and a combination of the
    cross-refined main branches. The first stage uses coordinate attention on
    full-channel maps; the second repeats it with single-channel spatial
    attention. The refined features are finally fused across modalities.
    """

    def __init__(self, channels: int, aux_names: tuple[str, ...],
                 fusion_mode: str = "progressive", reduction: int = 8):
        super().__init__()
        if not aux_names:
            raise ConfigError("refinement needs at least one auxiliary modality")
        if len(aux_names) > 2:
            raise ConfigError("at most two auxiliary modalities are supported")
        self.aux_names = tuple(aux_names)
        roles = ("main", *self.aux_names)
        self.adapt = nn.ModuleDict({r: ConvBNReLU(channels, channels) for r in roles})
        self.axis_att = nn.ModuleDict(
            {r: CoordinateAttention(channels, reduction) for r in roles})
        self.axis_cross = nn.ModuleDict(
            {n: InteractionBlock(channels) for n in self.aux_names})
        self.axis_combine = ConvBNReLU(len(self.aux_names) * channels, channels)
        self.local_att = nn.ModuleDict({r: SpatialAttention() for r in roles})
        self.local_cross = nn.ModuleDict(
            {n: InteractionBlock(1) for n in self.aux_names})
        self.local_combine = ConvBNReLU(len(self.aux_names) * channels, channels)
        self.fuse = _FusionHead(channels, len(self.aux_names), fusion_mode)

    def _attention_stage(self, feats, att_mods, cross_mods, combine):
        roles = ("main", *self.aux_names)
        att = {r: att_mods[r](feats[r]) for r in roles}
        gated = {r: att[r] * feats[r] for r in roles}
        cross = {n: cross_mods[n](att["main"], att[n]) for n in self.aux_names}
        out = {n: cross[n] * feats[n] + gated[n] + feats[n] for n in self.aux_names}
        main_branches = [cross[n] * feats["main"] + gated["main"] for n in self.aux_names]
        out["main"] = combine(torch.cat(main_branches, dim=1)) + feats["main"]
        return out, att, cross

    def forward(self, x_main: torch.Tensor, x_aux: dict[str, torch.Tensor],
                return_trace: bool = False):
        shapes = {tuple(x_main.shape), *(tuple(x.shape) for x in x_aux.values())}
        if len(shapes) != 1:
            raise ShapeError(f"refinement inputs differ in shape: {shapes}")
        feats = {"main": self.adapt["main"](x_main)}
        feats.update({n: self.adapt[n](x_aux[n]) for n in self.aux_names})
        stage1, axis_att, axis_cross = self._attention_stage(
            feats, self.axis_att, self.axis_cross, self.axis_combine)
        stage2, local_att, local_cross = self._attention_stage(
            stage1, self.local_att, self.local_cross, self.local_combine)
        fused = self.fuse(stage2["main"], [stage2[n] for n in self.aux_names])
        if return_trace:
            return fused, stage2, RefineTrace(
                adapted=feats, axis_att=axis_att, axis_cross=axis_cross,
                stage1=stage1, local_att=local_att, local_cross=local_cross,
                stage2=stage2, fused=fused)
        return fused, stage2


class LogitHead(nn.Module):
    """Two ConvBNReLU blocks then a single-channel convolution; keeps the
    spatial size intact."""

    def __init__(self, channels: int):
        super().__init__()
        self.block1 = ConvBNReLU(channels, channels)
        self.block2 = ConvBNReLU(channels, channels)
        self.out = nn.Conv2d(channels, 1, 3, padding=1)

    def forward(self, x):
        return self.out(self.block2(self.block1(x)))


@dataclass
class CoarseMapBundle:
    """Per-stream deepest-level logits and their fused coarse logit."""

    per_stream: dict[str, torch.Tensor]
    coarse: torch.Tensor


class CoarseMapHead(nn.Module):
    """Projects each stream's deepest feature to one channel and fuses the
    logits into a coarse map."""

    def __init__(self, channels: int, aux_names: tuple[str, ...],
                 fusion_mode: str = "progressive"):
        super().__init__()
        self.aux_names = tuple(aux_names)
        roles = ("main", *self.aux_names)
        self.heads = nn.ModuleDict({r: LogitHead(channels) for r in roles})
        self.fuse = _FusionHead(1, len(self.aux_names), fusion_mode)

    def forward(self, deep: dict[str, torch.Tensor]) -> CoarseMapBundle:
        logits = {r: self.heads[r](deep[r]) for r in ("main", *self.aux_names)}
        coarse = self.fuse(logits["main"], [logits[n] for n in self.aux_names])
        return CoarseMapBundle(per_stream=logits, coarse=coarse)


def apply_gate(feature: torch.Tensor, gate: torch.Tensor) -> torch.Tensor:
    """Residual gating: feature * gate + feature, gate broadcast over channels."""
    return feature * gate + feature


def coarse_gate(feature: torch.Tensor, coarse_logit: torch.Tensor) -> torch.Tensor:
    """Gates a feature map by the sigmoid of the coarse logit, bilinearly
    resized to the feature's spatial size."""
    gate = coarse_logit
    if gate.shape[-2:] != feature.shape[-2:]:
        gate = F.interpolate(gate, size=feature.shape[-2:], mode="bilinear",
                             align_corners=False)
    return apply_gate(feature, torch.sigmoid(gate))


class Decoder(nn.Module):
    """Top-down decoder: each step upsamples the deeper decoded feature (x2
    bilinear when sizes differ), concatenates the fused feature of the level,
    and applies a ConvBNReLU; one single-channel logit head per level."""

    def __init__(self, channels: int):
        super().__init__()
        self.entry = ConvBNReLU(channels, channels)
        self.blocks = nn.ModuleList(
            [ConvBNReLU(2 * channels, channels) for _ in range(4)])
        self.heads = nn.ModuleList(
            [nn.Conv2d(channels, 1, 3, padding=1) for _ in range(5)])

    def forward(self, fused: list[torch.Tensor],
                output_size: tuple[int, int] | None = None) -> list[torch.Tensor]:
        """fused: levels 1..5 shallow-to-deep. Returns 5 logit maps, level 1
        first, resized to `output_size` when given."""
        if len(fused) != 5:
            raise ShapeError(f"expected a 5-level pyramid, got {len(fused)} levels")
        d = self.entry(fused[4])
        decoded = [d]
        for i, block in zip((3, 2, 1, 0), self.blocks):
            up = d
            if up.shape[-2:] != fused[i].shape[-2:]:
                up = F.interpolate(up, size=fused[i].shape[-2:], mode="bilinear",
                                   align_corners=False)
            d = block(torch.cat([up, fused[i]], dim=1))
            decoded.append(d)
        decoded.reverse()  # level 1 first
        logits = [head(dec) for head, dec in zip(self.heads, decoded)]
        if output_size is not None:
            logits = [
                lg if lg.shape[-2:] == tuple(output_size)
                else F.interpolate(lg, size=output_size, mode="bilinear",
                                   align_corners=False)
                for lg in logits
            ]
        return logits
