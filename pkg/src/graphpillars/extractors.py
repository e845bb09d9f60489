"""Point feature extractors run before grid rendering.

Two layer types share the same calling convention: message passing over a
radius graph with a max-pooled, skip-connected update, and rigid kernel point
convolution wrapped in a bottleneck residual block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Linear, Module, Tensor, functional as F
from .autodiff.nn import kaiming
from .errors import ConfigError
from .neighbors import PointGraph


class PointFeaturizer(Module):
    """Embeds ``[v_r, rcs, 1]`` per point with one linear layer and ReLU."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.embed = Linear(3, width, rng)

    def __call__(self, points: np.ndarray) -> Tensor:
        raw = np.column_stack([points[:, 2], points[:, 3], np.ones(len(points))])
        return F.relu(self.embed(Tensor(raw)))


class MessagePassingLayer(Module):
    """``g_l``: three linear layers, ReLU after the first two."""

    def __init__(self, width: int, edge_dim: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden or 2 * width
        self.width = width
        self.edge_dim = edge_dim
        self.fc1 = Linear(width + edge_dim, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.fc3 = Linear(hidden, width, rng)

    def messages(self, sender_feats: Tensor, edge_feats: np.ndarray) -> Tensor:
        h = F.concat([sender_feats, Tensor(edge_feats)], axis=1)
        h = F.relu(self.fc1(h))
        h = F.relu(self.fc2(h))
        return self.fc3(h)


def message_pass(node_feats: Tensor, graph: PointGraph, edge_feats: np.ndarray,
                 layer: MessagePassingLayer) -> Tensor:
    """One round: per-edge messages from sender features, max-pooled per receiver, plus skip."""
    if node_feats.shape[1] != layer.width:
        raise ConfigError(f"node features have width {node_feats.shape[1]}, layer expects {layer.width}")
    if node_feats.shape[0] != graph.num_nodes:
        raise ConfigError(f"{node_feats.shape[0]} feature rows for a {graph.num_nodes}-node graph")
    edge_feats = np.asarray(edge_feats, dtype=np.float64)
    if edge_feats.ndim != 2 or len(edge_feats) != graph.num_edges:
        raise ConfigError(f"edge features of shape {edge_feats.shape} for {graph.num_edges} edges")
    if edge_feats.shape[1] != layer.edge_dim:
        raise ConfigError(f"edge features have width {edge_feats.shape[1]}, layer expects {layer.edge_dim}")
    if graph.num_edges == 0:
        return node_feats
    msgs = layer.messages(F.take_rows(node_feats, graph.senders), edge_feats)
    return node_feats + F.segment_max(msgs, graph.receivers, graph.num_nodes)


@dataclass(frozen=True)
class KernelLayout:
    points: np.ndarray
    sigma: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not np.any(np.all(pts == 0.0, axis=1)):
            raise ConfigError("kernel layout must contain the origin")
        if np.any(np.hypot(pts[:, 0], pts[:, 1]) > self.sigma):
            raise ConfigError("kernel points must lie within sigma of the origin")
        object.__setattr__(self, "points", pts)

    @classmethod
    def ring(cls, sigma: float = 1.0, count: int = 8, radius_factor: float = 0.6) -> KernelLayout:
        """The origin plus ``count`` points equally spaced on a circle of radius ``radius_factor * sigma``."""
        angles = 2 * math.pi * np.arange(count) / count
        ring = radius_factor * sigma * np.column_stack([np.cos(angles), np.sin(angles)])
        return cls(np.vstack([[0.0, 0.0], ring]), sigma)

    def __len__(self) -> int:
        return len(self.points)


def kernel_influence(kernel_point, y, sigma: float):
    """Linear correlation ``max(0, 1 - |x_k - y| / sigma)``; broadcasts over leading axes."""
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    d = np.linalg.norm(np.asarray(kernel_point, dtype=np.float64) - np.asarray(y, dtype=np.float64), axis=-1)
    return np.maximum(0.0, 1.0 - d / sigma)


class KPConvLayer(Module):
    def __init__(self, in_features: int, out_features: int, layout: KernelLayout, rng: np.random.Generator):
        self.layout = layout
        self.weights = kaiming(rng, (len(layout), in_features, out_features), in_features * len(layout))

    @property
    def in_features(self) -> int:
        return self.weights.shape[1]

    @property
    def out_features(self) -> int:
        return self.weights.shape[2]


def kpconv(xy: np.ndarray, node_feats: Tensor, layer: KPConvLayer, graph: PointGraph) -> Tensor:
    """Kernel point convolution over a graph whose receivers are the query points.

    ``graph`` must hold a self edge for every point and list edges grouped by
    receiver, as produced by ``build_graph(..., include_self=True)``.
    """
    if node_feats.shape[1] != layer.in_features:
        raise ConfigError(f"features have width {node_feats.shape[1]}, layer expects {layer.in_features}")
    if node_feats.shape[0] != graph.num_nodes:
        raise ConfigError(f"{node_feats.shape[0]} feature rows for a {graph.num_nodes}-node graph")
    k, f_in, f_out = layer.weights.shape
    xy = np.asarray(xy, dtype=np.float64)
    rel = xy[graph.senders] - xy[graph.receivers]
    influence = kernel_influence(layer.layout.points[None, :, :], rel[:, None, :], layer.layout.sigma)
    gathered = F.reshape(F.take_rows(node_feats, graph.senders), (graph.num_edges, 1, f_in))
    weighted = gathered * Tensor(influence[:, :, None])
    pooled = F.segment_sum_sorted(weighted, graph.receivers, graph.num_nodes)
    return F.reshape(pooled, (graph.num_nodes, k * f_in)) @ F.reshape(layer.weights, (k * f_in, f_out))


class KPConvBlock(Module):
    """Bottleneck residual block: linear, kpconv, linear (each with ReLU) plus skip."""

    def __init__(self, in_features: int, out_features: int, layout: KernelLayout,
                 rng: np.random.Generator, bottleneck: int | None = None):
        mid = bottleneck or max(1, in_features // 2)
        self.reduce = Linear(in_features, mid, rng)
        self.conv = KPConvLayer(mid, mid, layout, rng)
        self.expand = Linear(mid, out_features, rng)
        self.skip = Linear(in_features, out_features, rng) if in_features != out_features else None

    def __call__(self, xy: np.ndarray, feats: Tensor, graph: PointGraph) -> Tensor:
        if feats.shape[1] != self.reduce.in_features:
            raise ConfigError(f"block expects width {self.reduce.in_features}, got {feats.shape[1]}")
        h = F.relu(self.reduce(feats))
        h = F.relu(kpconv(xy, h, self.conv, graph))
        h = F.relu(self.expand(h))
        shortcut = feats if self.skip is None else F.linear(feats, self.skip.weight, self.skip.bias)
        return shortcut + h


def kpconv_block(xy: np.ndarray, feats: Tensor, block: KPConvBlock, graph: PointGraph) -> Tensor:
    return block(xy, feats, graph)
