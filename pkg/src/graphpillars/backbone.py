"""Grid CNN: convolutional stem, four residual stages and a top-down feature pyramid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ChannelAffine, Conv2d, Module, Tensor, functional as F
from .errors import ConfigError


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 16
    stem_channels: int = 32
    stage_channels: tuple[int, int, int, int] = (32, 64, 64, 64)
    stage_blocks: tuple[int, int, int, int] = (3, 6, 6, 3)
    fpn_channels: int = 64


class ConvUnit(Module):
    """conv (no bias) followed by a per-channel scale and shift."""

    def __init__(self, cin: int, cout: int, kernel: int, rng, stride: int = 1, scale: float = 1.0):
        self.conv = Conv2d(cin, cout, kernel, rng, stride=stride, bias=False)
        self.affine = ChannelAffine(cout, scale)

    def __call__(self, x: Tensor) -> Tensor:
        return self.affine(self.conv(x))


class Stem(Module):
    def __init__(self, cin: int, cout: int, rng):
        self.conv1 = ConvUnit(cin, cout, 3, rng)
        self.conv2 = ConvUnit(cout, cout, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.conv1.conv.in_channels:
            raise ConfigError(f"stem expects {self.conv1.conv.in_channels} channels, got {x.shape[1]}")
        return F.relu(self.conv2(F.relu(self.conv1(x))))


class DownBlock(Module):
    """Stride-2 residual block with a strided 1x1 projection on the skip path."""

    def __init__(self, cin: int, cout: int, rng):
        self.conv1 = ConvUnit(cin, cout, 3, rng, stride=2)
        self.conv2 = ConvUnit(cout, cout, 3, rng)
        self.project = ConvUnit(cin, cout, 1, rng, stride=2)

    def __call__(self, x: Tensor) -> Tensor:
        return F.relu(self.conv2(F.relu(self.conv1(x))) + self.project(x))


class IdentityBlock(Module):
    """Two 3x3 convs plus identity skip. The last scale starts at zero."""

    def __init__(self, channels: int, rng):
        self.conv1 = ConvUnit(channels, channels, 3, rng)
        self.conv2 = ConvUnit(channels, channels, 3, rng, scale=0.0)

    def __call__(self, x: Tensor) -> Tensor:
        return F.relu(x + self.conv2(F.relu(self.conv1(x))))


class ResidualStage(Module):
    def __init__(self, cin: int, cout: int, blocks: int, rng):
        if blocks < 1:
            raise ConfigError("a residual stage needs at least one block")
        self.down = DownBlock(cin, cout, rng)
        self.blocks = [IdentityBlock(cout, rng) for _ in range(blocks - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        if h % 2 or w % 2:
            raise ConfigError(f"residual stage needs even spatial dims, got {h}x{w}")
        x = self.down(x)
        for block in self.blocks:
            x = block(x)
        return x


def residual_stage(x: Tensor, stage: ResidualStage) -> Tensor:
    return stage(x)


@dataclass
class PyramidFeatures:
    """FPN outputs keyed by stride relative to the input grid."""

    maps: dict[int, Tensor]

    def level(self, stride: int) -> Tensor:
        if stride not in self.maps:
            raise ConfigError(f"no pyramid level at stride {stride}; have {sorted(self.maps)}")
        return self.maps[stride]


class FPN(Module):
    """Top-down pyramid over four stage outputs at strides 2, 4, 8, 16."""

    def __init__(self, stage_channels, channels: int, rng):
        self.top = Conv2d(stage_channels[3], channels, 1, rng)
        self.laterals = [Conv2d(c, channels, 1, rng) for c in stage_channels[:3]]
        self.smooth = [Conv2d(channels, channels, 3, rng) for _ in range(3)]

    def __call__(self, stages: list[Tensor]) -> PyramidFeatures:
        if len(stages) != 4:
            raise ConfigError(f"FPN expects four stage outputs, got {len(stages)}")
        x = self.top(stages[3])
        maps = {}
        for level in (2, 1, 0):
            up = F.upsample2x_nearest(x)
            lateral = self.laterals[level](stages[level])
            if up.shape[-2:] != lateral.shape[-2:]:
                raise ConfigError(f"top-down map {up.shape[-2:]} does not match lateral {lateral.shape[-2:]}")
            x = F.relu(self.smooth[level](up + lateral))
            maps[2 ** (level + 1)] = x
        return PyramidFeatures({2: maps[2], 4: maps[4], 8: maps[8]})


def fpn(stage_outputs: list[Tensor], module: FPN) -> PyramidFeatures:
    return module(stage_outputs)


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.stem = Stem(cfg.in_channels, cfg.stem_channels, rng)
        widths = (cfg.stem_channels,) + tuple(cfg.stage_channels)
        self.stages = [ResidualStage(widths[i], widths[i + 1], cfg.stage_blocks[i], rng) for i in range(4)]
        self.fpn = FPN(cfg.stage_channels, cfg.fpn_channels, rng)

    def __call__(self, grid: Tensor) -> PyramidFeatures:
        x = self.stem(grid)
        outputs = []
        for stage in self.stages:
            x = stage(x)
            outputs.append(x)
        return self.fpn(outputs)
