"""Parameter containers and the small set of layers the models are built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def kaiming(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    return parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))


class Module:
    """Walks attributes to find parameters, in attribute definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, value in state.items():
            if name not in own:
                continue
            value = np.asarray(value, dtype=np.float64)
            if value.shape != own[name].shape:
                raise ValueError(f"{name}: shape {value.shape} != {own[name].shape}")
            own[name].data = value.copy()

    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = kaiming(rng, (in_features, out_features), in_features)
        self.bias = parameter(np.zeros(out_features))

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, padding: int | None = None,
                 bias: bool = True):
        self.weight = kaiming(rng, (out_channels, in_channels, kernel, kernel),
                              in_channels * kernel * kernel)
        if bias:
            self.bias = parameter(np.zeros(out_channels))
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x) -> Tensor:
        return F.conv2d(x, self.weight, getattr(self, "bias", None), self.stride, self.padding)


class ChannelAffine(Module):
    """Per-channel learnable scale and shift on (N, C, H, W) maps."""

    def __init__(self, channels: int, scale: float = 1.0):
        self.scale = parameter(np.full(channels, scale))
        self.shift = parameter(np.zeros(channels))

    def __call__(self, x) -> Tensor:
        c = self.scale.shape[0]
        return x * F.reshape(self.scale, (1, c, 1, 1)) + F.reshape(self.shift, (1, c, 1, 1))
