"""Cross-modal long-range attention plus the coordinate- and spatial-attention
primitives used during per-level refinement."""

from __future__ import annotations

import torch
from torch import nn

from .encoder import ConvBNReLU
from .errors import LevelError, ShapeError

ATTENTION_LEVELS = (3, 4, 5)  # long-range attention runs on the deep levels only


def validate_attention_level(level: int) -> None:
    if level not in ATTENTION_LEVELS:
        raise LevelError(f"cross-modal attention supports levels {ATTENTION_LEVELS}, got {level}")


class CrossModalAttention(nn.Module):
    """Query-key attention over the joint embedding of a main and an auxiliary
    feature map, propagating long-range context into both modalities.

    Returns (main_assisted, aux_enhanced): the attended main-modality feature
    for later cross-auxiliary combination, and the auxiliary feature with the
    attended context added back residually.
    """

    def __init__(self, channels: int, embed_channels: int | None = None):
        super().__init__()
        if embed_channels is None:
            embed_channels = max(channels // 2, 1)
        self.joint = ConvBNReLU(2 * channels, channels)
        self.embed_query = nn.Conv2d(channels, embed_channels, 1)
        self.embed_key = nn.Conv2d(channels, embed_channels, 1)
        self.embed_value_main = nn.Conv2d(channels, embed_channels, 1)
        self.embed_value_aux = nn.Conv2d(channels, embed_channels, 1)
        self.project_main = nn.Conv2d(embed_channels, channels, 1)
        self.project_aux = nn.Conv2d(embed_channels, channels, 1)

    def affinity(self, x_main: torch.Tensor, x_aux: torch.Tensor) -> torch.Tensor:
        """(B, HW, HW) row-softmax affinity from the joint embedding."""
        if x_main.shape != x_aux.shape:
            raise ShapeError(
                f"modality shapes differ: {tuple(x_main.shape)} vs {tuple(x_aux.shape)}")
        joint = self.joint(torch.cat([x_main, x_aux], dim=1))
        q = self.embed_query(joint).flatten(2).transpose(1, 2)  # (B, HW, E)
        k = self.embed_key(joint).flatten(2)                    # (B, E, HW)
        return torch.softmax(torch.bmm(q, k), dim=-1)

    def forward(self, x_main, x_aux):
        att = self.affinity(x_main, x_aux)
        b, _, h, w = x_main.shape
        v_main = self.embed_value_main(x_main).flatten(2).transpose(1, 2)
        v_aux = self.embed_value_aux(x_aux).flatten(2).transpose(1, 2)
        att_main = torch.bmm(att, v_main).transpose(1, 2).reshape(b, -1, h, w)
        att_aux = torch.bmm(att, v_aux).transpose(1, 2).reshape(b, -1, h, w)
        main_assisted = self.project_main(att_main)
        aux_enhanced = x_aux + self.project_aux(att_aux)
        return main_assisted, aux_enhanced


class MultiModalEnhance(nn.Module):
    """Per-level enhancement of one main and N auxiliary features.

    Each auxiliary runs cross-modal attention against the main modality; the
    main output combines all attended results through one ConvBNReLU.
    """

    def __init__(self, channels: int, aux_names: tuple[str, ...], level: int = 3):
        super().__init__()
        validate_attention_level(level)
        if not aux_names:
            raise ShapeError("at least one auxiliary modality is required")
        self.level = level
        self.aux_names = tuple(aux_names)
        self.pairs = nn.ModuleDict(
            {name: CrossModalAttention(channels) for name in self.aux_names})
        self.combine = ConvBNReLU(len(self.aux_names) * channels, channels)

    def forward(self, x_main: torch.Tensor, x_aux: dict[str, torch.Tensor]):
        assisted = []
        enhanced = {}
        for name in self.aux_names:
            a, e = self.pairs[name](x_main, x_aux[name])
            assisted.append(a)
            enhanced[name] = e
        y_main = self.combine(torch.cat(assisted, dim=1))
        return y_main, enhanced


class CoordinateAttention(nn.Module):
    """Axis-factorized attention: sigmoid gates along H and W per channel,
    returned as their dense (B, C, H, W) broadcast product in (0, 1)."""

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        if reduction < 1:
            raise ValueError(f"reduction must be >= 1, got {reduction}")
        mid = max(8, channels // reduction)
        self.transform = ConvBNReLU(channels, mid, kernel_size=1)
        self.gate_h = nn.Conv2d(mid, channels, 1)
        self.gate_w = nn.Conv2d(mid, channels, 1)

    def forward(self, x):
        _, _, h, w = x.shape
        pooled_h = x.mean(dim=3, keepdim=True)                   # (B, C, H, 1)
        pooled_w = x.mean(dim=2, keepdim=True).transpose(2, 3)   # (B, C, W, 1)
        y = self.transform(torch.cat([pooled_h, pooled_w], dim=2))
        y_h, y_w = torch.split(y, [h, w], dim=2)
        a_h = torch.sigmoid(self.gate_h(y_h))                    # (B, C, H, 1)
        a_w = torch.sigmoid(self.gate_w(y_w.transpose(2, 3)))    # (B, C, 1, W)
        return a_h * a_w


class SpatialAttention(nn.Module):
    """Single-channel gate from channel-wise mean and max statistics."""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, x):
        stats = torch.cat(
            [x.mean(dim=1, keepdim=True), x.max(dim=1, keepdim=True).values], dim=1)
        return torch.sigmoid(self.conv(stats))
