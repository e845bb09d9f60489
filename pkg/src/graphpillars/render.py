"""Bird's-eye-view grid rendering of point features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Linear, Module, Tensor, functional as F
from .errors import ConfigError

OUTSIDE = None


@dataclass(frozen=True)
class GridSpec:
    """Square grid centered on the sensor; row indexes y, column indexes x."""

    extent: float = 48.0
    cell: float = 0.5

    def __post_init__(self):
        if self.extent <= 0 or self.cell <= 0:
            raise ConfigError("grid extent and cell must be positive")
        n = self.extent / self.cell
        if abs(n - round(n)) > 1e-9:
            raise ConfigError(f"extent {self.extent} is not a multiple of cell {self.cell}")

    @property
    def size(self) -> int:
        return int(round(self.extent / self.cell))

    @property
    def H(self) -> int:
        return self.size

    @property
    def W(self) -> int:
        return self.size

    def coarsen(self, stride: int) -> GridSpec:
        return GridSpec(self.extent, self.cell * stride)

    def cell_center(self, row, col):
        half = self.extent / 2
        return (np.asarray(col) + 0.5) * self.cell - half, (np.asarray(row) + 0.5) * self.cell - half


def cell_index(x: float, y: float, spec: GridSpec):
    """(row, col) of the cell holding (x, y), or ``None`` beyond the extent."""
    rows, cols, inside = cell_indices(np.array([[x, y]]), spec)
    return (int(rows[0]), int(cols[0])) if inside[0] else OUTSIDE


def cell_indices(xy: np.ndarray, spec: GridSpec):
    """Vectorised :func:`cell_index`; returns rows, cols and an inside mask."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    half = spec.extent / 2
    n = spec.size
    inside = np.all((xy >= -half) & (xy <= half), axis=1)
    col = np.floor((xy[:, 0] + half) / spec.cell).astype(np.int64)
    row = np.floor((xy[:, 1] + half) / spec.cell).astype(np.int64)
    # the upper boundary belongs to the last cell
    col = np.clip(col, 0, n - 1)
    row = np.clip(row, 0, n - 1)
    return row, col, inside


@dataclass
class BevGrid:
    features: Tensor
    spec: GridSpec


class PillarEncoder(Module):
    """Per-point linear + ReLU applied to features decorated with cell-center offsets."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.mlp = Linear(in_features + 2, out_features, rng)

    @property
    def out_features(self) -> int:
        return self.mlp.out_features


def render_pillars(xy: np.ndarray, point_feats: Tensor, spec: GridSpec, pillar: PillarEncoder,
                   batch_index: np.ndarray | None = None, batch_size: int = 1) -> Tensor:
    """Scatter learned point features into a (B, C, H, W) grid by cell-wise mean."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    if point_feats.shape[0] != len(xy):
        raise ConfigError(f"{point_feats.shape[0]} feature rows for {len(xy)} points")
    if point_feats.shape[1] + 2 != pillar.mlp.in_features:
        raise ConfigError(f"pillar encoder expects {pillar.mlp.in_features - 2} features, got {point_feats.shape[1]}")
    n = spec.size
    c = pillar.out_features
    batch_index = np.zeros(len(xy), dtype=np.int64) if batch_index is None else np.asarray(batch_index)
    rows, cols, inside = cell_indices(xy, spec)
    if not inside.any():
        return Tensor(np.zeros((batch_size, c, n, n)))
    keep = np.flatnonzero(inside)
    cx, cy = spec.cell_center(rows[keep], cols[keep])
    offsets = np.column_stack([xy[keep, 0] - cx, xy[keep, 1] - cy])
    feats = point_feats if len(keep) == len(xy) else F.take_rows(point_feats, keep)
    decorated = F.concat([feats, Tensor(offsets)], axis=1)
    encoded = F.relu(pillar.mlp(decorated))
    flat = (batch_index[keep] * n + rows[keep]) * n + cols[keep]
    grid = F.scatter_mean(encoded, flat, batch_size * n * n)
    return F.transpose(F.reshape(grid, (batch_size, n, n, c)), (0, 3, 1, 2))


def render_handcrafted(points: np.ndarray, spec: GridSpec, batch_index: np.ndarray | None = None,
                       batch_size: int = 1) -> np.ndarray:
    """Three channels per cell: point count, mean v_r, mean rcs."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    n = spec.size
    batch_index = np.zeros(len(points), dtype=np.int64) if batch_index is None else np.asarray(batch_index)
    rows, cols, inside = cell_indices(points[:, :2], spec)
    flat = ((batch_index * n + rows) * n + cols)[inside]
    buckets = batch_size * n * n
    counts = np.bincount(flat, minlength=buckets).astype(np.float64)
    means = F.scatter_mean(Tensor(points[inside][:, 2:4]), flat, buckets).data
    grid = np.column_stack([counts, means]).reshape(batch_size, n, n, 3)
    return np.ascontiguousarray(grid.transpose(0, 3, 1, 2))


def grid_to_bev(grid, spec: GridSpec) -> BevGrid:
    data = grid if isinstance(grid, Tensor) else Tensor(grid)
    if data.ndim == 4 and data.shape[0] == 1:
        data = F.reshape(data, data.shape[1:])
    return BevGrid(data, spec)

