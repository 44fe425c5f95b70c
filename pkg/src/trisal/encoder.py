"""Hierarchical encoder streams: a five-level trunk per modality, an ASPP head
on the deepest level, and per-level compression to a common channel width."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn
from torchvision.models import resnet34

from .errors import ConfigError, ShapeError

LEVEL_STRIDES = (2, 4, 8, 16, 32)
TOY_WIDTHS = (16, 24, 32, 48, 64)
PAPER_WIDTHS = (64, 64, 128, 256, 512)
STREAM_NAMES = ("rgb", "depth", "flow")


class ConvBNReLU(nn.Module):
    """Convolution + BatchNorm + ReLU, padding chosen to preserve spatial size
    at stride 1."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 3,
                 stride: int = 1, dilation: int = 1):
        super().__init__()
        padding = dilation * (kernel_size - 1) // 2
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size, stride=stride,
                              padding=padding, dilation=dilation, bias=False)
        self.bn = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.relu(self.bn(self.conv(x)))


class ASPP(nn.Module):
    """Multi-dilation pooling head; preserves channel count and spatial size."""

    def __init__(self, channels: int, rates: tuple[int, ...] = (1, 6, 12, 18)):
        super().__init__()
        branches = [ConvBNReLU(channels, channels, kernel_size=1)]
        branches += [ConvBNReLU(channels, channels, dilation=r) for r in rates[1:]]
        self.branches = nn.ModuleList(branches)
        self.pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            ConvBNReLU(channels, channels, kernel_size=1),
        )
        self.project = ConvBNReLU((len(rates) + 1) * channels, channels, kernel_size=1)

    def forward(self, x):
        outs = [branch(x) for branch in self.branches]
        pooled = self.pool(x)
        outs.append(F.interpolate(pooled, size=x.shape[-2:], mode="bilinear",
                                  align_corners=False))
        return self.project(torch.cat(outs, dim=1))


class ToyTrunk(nn.Module):
    """Five stride-2 plain convolution stages for desk-scale runs."""

    def __init__(self, widths: tuple[int, ...] = TOY_WIDTHS):
        super().__init__()
        stages = []
        in_ch = 3
        for w in widths:
            stages.append(ConvBNReLU(in_ch, w, stride=2))
            in_ch = w
        self.stages = nn.ModuleList(stages)

    def forward(self, x) -> list[torch.Tensor]:
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class ResNetTrunk(nn.Module):
    """ResNet-34 split into five feature stages (strides 2, 4, 8, 16, 32)."""

    def __init__(self):
        super().__init__()
        net = resnet34(weights=None)
        self.stage1 = nn.Sequential(net.conv1, net.bn1, net.relu)
        self.stage2 = nn.Sequential(net.maxpool, net.layer1)
        self.stage3 = net.layer2
        self.stage4 = net.layer3
        self.stage5 = net.layer4

    def forward(self, x) -> list[torch.Tensor]:
        f1 = self.stage1(x)
        f2 = self.stage2(f1)
        f3 = self.stage3(f2)
        f4 = self.stage4(f3)
        f5 = self.stage5(f4)
        return [f1, f2, f3, f4, f5]


@dataclass
class EncoderConfig:
    scale_preset: str = "toy"                      # "toy" | "paper"
    input_size: tuple[int, int] = (64, 64)         # (H, W), divisible by 32
    common_width: int | None = None                # channels after compression
    base_widths: tuple[int, ...] | None = None     # trunk widths per level

    def __post_init__(self):
        if self.scale_preset not in ("toy", "paper"):
            raise ConfigError(f"unknown scale preset '{self.scale_preset}'")
        if self.common_width is None:
            self.common_width = 16 if self.scale_preset == "toy" else 64
        if self.base_widths is None:
            self.base_widths = TOY_WIDTHS if self.scale_preset == "toy" else PAPER_WIDTHS
        self.base_widths = tuple(self.base_widths)
        self.input_size = (int(self.input_size[0]), int(self.input_size[1]))
        if len(self.base_widths) != 5:
            raise ConfigError(f"base_widths needs 5 entries, got {len(self.base_widths)}")
        if self.scale_preset == "paper" and self.base_widths != PAPER_WIDTHS:
            raise ConfigError("paper preset uses the fixed ResNet-34 stage widths")
        h, w = self.input_size
        if h % 32 or w % 32 or h < 32 or w < 32:
            raise ConfigError(f"input size {h}x{w} must be a positive multiple of 32")
        if self.common_width < 1:
            raise ConfigError("common_width must be positive")

    def level_shapes(self) -> list[tuple[int, int, int]]:
        """(channels, height, width) per level for the configured input size."""
        h, w = self.input_size
        return [(self.common_width, h // s, w // s) for s in LEVEL_STRIDES]


@dataclass
class FeaturePyramid:
    """Five same-width feature maps of one modality, strides 2 through 32."""

    levels: list[torch.Tensor]
    modality: str

    def __post_init__(self):
        if len(self.levels) != 5:
            raise ShapeError(f"pyramid needs 5 levels, got {len(self.levels)}")
        widths = {lvl.shape[-3] for lvl in self.levels}
        if len(widths) != 1:
            raise ShapeError(f"pyramid levels disagree on channels: {widths}")
        sizes = [lvl.shape[-2:] for lvl in self.levels]
        for a, b in zip(sizes, sizes[1:]):
            if b[0] > a[0] or b[1] > a[1]:
                raise ShapeError(f"pyramid spatial sizes increase with depth: {sizes}")

    def level(self, i: int) -> torch.Tensor:
        """1-based level accessor."""
        return self.levels[i - 1]


class EncoderStream(nn.Module):
    """One modality's encoder: trunk, deepest-level ASPP, per-level compression."""

    def __init__(self, config: EncoderConfig, modality: str = "rgb"):
        super().__init__()
        self.config = config
        self.modality = modality
        if config.scale_preset == "toy":
            self.trunk = ToyTrunk(config.base_widths)
        else:
            self.trunk = ResNetTrunk()
        self.aspp = ASPP(config.base_widths[-1])
        self.compress = nn.ModuleList(
            [ConvBNReLU(w, config.common_width) for w in config.base_widths])

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.dim() != 4:
            raise ShapeError(f"expected (B, C, H, W) input, got {tuple(x.shape)}")
        if x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)  # single-channel depth replicated
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise ShapeError(f"input {h}x{w} is not divisible by 32")
        feats = self.trunk(x)
        feats[-1] = self.aspp(feats[-1])
        return [cp(f) for cp, f in zip(self.compress, feats)]

    def encode(self, x: torch.Tensor) -> FeaturePyramid:
        return FeaturePyramid(self.forward(x), self.modality)


def build_streams(config: EncoderConfig,
                  enabled: tuple[str, ...] = STREAM_NAMES) -> nn.ModuleDict:
    """One parameter-independent EncoderStream per enabled modality.

    RGB is mandatory; dropping depth yields the two-stream variant.
    """
    enabled_set = set(enabled)
    unknown = enabled_set - set(STREAM_NAMES)
    if unknown:
        raise ConfigError(f"unknown streams {sorted(unknown)}")
    if "rgb" not in enabled_set:
        raise ConfigError("the rgb stream is mandatory")
    return nn.ModuleDict(
        {m: EncoderStream(config, m) for m in STREAM_NAMES if m in enabled_set})
