"""Uniform-grid spatial hashing, radius graphs and handcrafted edge features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_OFFSETS = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]


class SpatialHash:
    """Buckets 2-D points by integer cell coordinates ``floor(xy / cell_size)``."""

    def __init__(self, xy: np.ndarray, cell_size: float):
        if cell_size <= 0:
            raise ConfigError(f"cell size must be positive, got {cell_size}")
        self.xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        self.cell_size = float(cell_size)
        self.cells = np.floor(self.xy / self.cell_size).astype(np.int64)
        keys = self._key(self.cells[:, 0], self.cells[:, 1])
        self._order = np.argsort(keys, kind="stable")
        sorted_keys = keys[self._order]
        starts = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]]) if len(keys) else np.array([], dtype=np.int64)
        self._keys = sorted_keys[starts]
        self._starts = starts
        self._ends = np.r_[starts[1:], len(keys)].astype(np.int64)

    @staticmethod
    def _key(cx, cy):
        # cells stay far below 2**31 for any scene extent we handle
        return (np.asarray(cx, dtype=np.int64) << 32) + (np.asarray(cy, dtype=np.int64) + (1 << 31))

    @property
    def buckets(self) -> dict[tuple[int, int], np.ndarray]:
        out = {}
        for key, a, b in zip(self._keys, self._starts, self._ends):
            idx = self._order[a:b]
            cell = self.cells[idx[0]]
            out[(int(cell[0]), int(cell[1]))] = np.sort(idx)
        return out

    def candidate_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All (query, other) index pairs whose cells are 8-adjacent or equal."""
        queries, others = [], []
        if len(self.xy) == 0:
            empty = np.array([], dtype=np.int64)
            return empty, empty
        for dx, dy in _OFFSETS:
            target = self._key(self.cells[:, 0] + dx, self.cells[:, 1] + dy)
            pos = np.searchsorted(self._keys, target)
            pos_c = np.minimum(pos, len(self._keys) - 1)
            found = self._keys[pos_c] == target
            q = np.flatnonzero(found)
            a, b = self._starts[pos_c[q]], self._ends[pos_c[q]]
            counts = b - a
            rep_q = np.repeat(q, counts)
            within = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
            queries.append(rep_q)
            others.append(self._order[np.repeat(a, counts) + within])
        return np.concatenate(queries), np.concatenate(others)

    def query(self, point, radius: float) -> np.ndarray:
        """Indices within ``radius`` of ``point`` (radius must not exceed the cell size)."""
        if radius > self.cell_size:
            raise ConfigError("query radius larger than the hash cell size")
        cell = np.floor(np.asarray(point, dtype=np.float64) / self.cell_size).astype(np.int64)
        hits = []
        for dx, dy in _OFFSETS:
            key = self._key(cell[0] + dx, cell[1] + dy)
            pos = np.searchsorted(self._keys, key)
            if pos < len(self._keys) and self._keys[pos] == key:
                hits.append(self._order[self._starts[pos]:self._ends[pos]])
        if not hits:
            return np.array([], dtype=np.int64)
        idx = np.concatenate(hits)
        d = np.hypot(self.xy[idx, 0] - point[0], self.xy[idx, 1] - point[1])
        return np.sort(idx[d <= radius])


@dataclass(frozen=True, eq=False)
class PointGraph:
    """Directed edges sender -> receiver, ordered receiver-major, then distance, then sender."""

    num_nodes: int
    senders: np.ndarray
    receivers: np.ndarray
    distances: np.ndarray
    edge_features: np.ndarray | None = None

    @property
    def num_edges(self) -> int:
        return len(self.senders)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.senders.tolist(), self.receivers.tolist()))


def build_graph(xy: np.ndarray, radius: float, max_neighbors: int,
                include_self: bool = False) -> PointGraph:
    """Connect every point to its neighbors within ``radius``.

    Receivers with more than ``max_neighbors`` candidates keep the nearest
    ones, distance ties broken by lower sender index. ``include_self`` adds a
    zero-length self edge first in each receiver's list, on top of the cap.
    """
    if radius <= 0:
        raise ConfigError(f"radius must be positive, got {radius}")
    if max_neighbors < 1:
        raise ConfigError(f"max_neighbors must be >= 1, got {max_neighbors}")
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    n = len(xy)
    recv, send = SpatialHash(xy, radius).candidate_pairs()
    keep = recv != send
    recv, send = recv[keep], send[keep]
    dist = np.hypot(xy[send, 0] - xy[recv, 0], xy[send, 1] - xy[recv, 1])
    keep = dist <= radius
    recv, send, dist = recv[keep], send[keep], dist[keep]
    order = np.lexsort((send, dist, recv))
    recv, send, dist = recv[order], send[order], dist[order]
    if len(recv):
        starts = np.flatnonzero(np.r_[True, recv[1:] != recv[:-1]])
        rank = np.arange(len(recv)) - np.repeat(starts, np.diff(np.r_[starts, len(recv)]))
        keep = rank < max_neighbors
        recv, send, dist = recv[keep], send[keep], dist[keep]
    if include_self:
        loops = np.arange(n)
        recv = np.concatenate([loops, recv])
        send = np.concatenate([loops, send])
        dist = np.concatenate([np.zeros(n), dist])
        order = np.lexsort((dist, recv))  # stable: self edge (distance 0, listed first) leads
        recv, send, dist = recv[order], send[order], dist[order]
    return PointGraph(n, send.astype(np.int64), recv.astype(np.int64), dist)


def brute_force_neighbors(xy: np.ndarray, radius: float) -> set[tuple[int, int]]:
    """All (sender, receiver) pairs within radius, by exhaustive pairwise scan."""
    xy = np.asarray(xy, dtype=np.float64)
    pairs = set()
    for r in range(len(xy)):
        for s in range(len(xy)):
            if s != r and np.hypot(xy[s, 0] - xy[r, 0], xy[s, 1] - xy[r, 1]) <= radius:
                pairs.add((s, r))
    return pairs


def edge_features(points: np.ndarray, graph: PointGraph, with_distance: bool = True) -> np.ndarray:
    """Per-edge ``[dx, dy, dv_r, |(dx, dy)|]`` with deltas taken sender minus receiver."""
    points = np.asarray(points, dtype=np.float64)
    delta = points[graph.senders, :3] - points[graph.receivers, :3]
    if not with_distance:
        return delta
    return np.column_stack([delta, np.hypot(delta[:, 0], delta[:, 1])])


def batch_graphs(graphs: list[PointGraph]) -> PointGraph:
    """Disjoint union with node indices offset per graph."""
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
    senders = [g.senders + o for g, o in zip(graphs, offsets)]
    receivers = [g.receivers + o for g, o in zip(graphs, offsets)]
    feats = None
    if graphs and all(g.edge_features is not None for g in graphs):
        feats = np.concatenate([g.edge_features for g in graphs])
    cat = lambda parts, dtype: np.concatenate(parts).astype(dtype) if parts else np.array([], dtype=dtype)  # noqa: E731
    return PointGraph(int(offsets[-1]), cat(senders, np.int64), cat(receivers, np.int64),
                      cat([g.distances for g in graphs], np.float64), feats)
