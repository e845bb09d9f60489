import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphpillars.errors import ConfigError
from graphpillars.neighbors import SpatialHash, batch_graphs, build_graph, edge_features

from oracles import brute_neighbors


def test_two_point_examples():
    g = build_graph(np.array([[0.0, 0.0], [0.5, 0.0]]), 1.0, 16)
    assert sorted(g.edges) == [(0, 1), (1, 0)]
    assert build_graph(np.array([[0.0, 0.0], [3.0, 0.0]]), 1.0, 16).num_edges == 0


def test_empty_cloud():
    g = build_graph(np.zeros((0, 2)), 2.0, 16)
    assert g.num_nodes == 0 and g.num_edges == 0


def test_bad_parameters():
    with pytest.raises(ConfigError):
        build_graph(np.zeros((2, 2)), 0.0, 4)
    with pytest.raises(ConfigError):
        build_graph(np.zeros((2, 2)), 1.0, 0)


def test_random_cloud_matches_brute_force():
    rng = np.random.default_rng(0)
    xy = rng.uniform(-10, 10, (200, 2))
    g = build_graph(xy, 2.0, 10_000)
    assert set(g.edges) == brute_neighbors(xy.tolist(), 2.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 500), st.floats(0.2, 4.0), st.integers(0, 2**31 - 1))
def test_hash_neighbors_equal_brute_force(n, radius, seed):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-8, 8, (n, 2))
    # quantize a portion so that exact-radius and coincident points occur
    xy[: n // 4] = np.round(xy[: n // 4] * 2) / 2
    g = build_graph(xy, radius, 10_000)
    d = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
    s, r = np.nonzero((d <= radius) & ~np.eye(n, dtype=bool))
    assert set(g.edges) == set(zip(s.tolist(), r.tolist()))
    assert len(set(g.edges)) == g.num_edges
    assert np.all(g.distances <= radius)
    assert np.all(g.senders != g.receivers)


def test_hash_buckets_partition_points():
    rng = np.random.default_rng(1)
    xy = rng.uniform(-5, 5, (300, 2))
    h = SpatialHash(xy, 1.5)
    seen = np.concatenate(list(h.buckets.values()))
    assert sorted(seen.tolist()) == list(range(300))
    for (cx, cy), idx in h.buckets.items():
        assert np.all(np.floor(xy[idx, 0] / 1.5) == cx) and np.all(np.floor(xy[idx, 1] / 1.5) == cy)
    q = h.query(xy[0], 1.5)
    d = np.hypot(*(xy - xy[0]).T)
    assert set(q.tolist()) == set(np.flatnonzero(d <= 1.5).tolist())


def test_cap_keeps_nearest_with_index_tiebreak():
    xy = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 0.5], [0.0, 1.5]])
    g = build_graph(xy, 2.0, 2)
    incoming = [(s, d) for s, r, d in zip(g.senders, g.receivers, g.distances) if r == 0]
    assert [s for s, _ in incoming] == [3, 1]
    g = build_graph(np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]), 2.0, 2)
    assert [s for s, r in g.edges if r == 0] == [1, 2]


def test_edge_order_is_receiver_major_then_distance():
    rng = np.random.default_rng(2)
    xy = rng.uniform(-4, 4, (60, 2))
    g = build_graph(xy, 2.0, 5)
    key = list(zip(g.receivers.tolist(), g.distances.tolist(), g.senders.tolist()))
    assert key == sorted(key)
    g2 = build_graph(xy.copy(), 2.0, 5)
    assert np.array_equal(g.senders, g2.senders) and np.array_equal(g.receivers, g2.receivers)


def test_self_edges_lead_each_receiver():
    xy = np.array([[0.0, 0.0], [0.5, 0.0], [5.0, 5.0]])
    g = build_graph(xy, 1.0, 4, include_self=True)
    assert g.edges == [(0, 0), (1, 0), (1, 1), (0, 1), (2, 2)]


def test_edge_feature_example_and_recompute():
    pts = np.array([[0.0, 0.0, 2.0, 0.0], [1.0, 0.0, 5.0, 0.0]])
    g = build_graph(pts[:, :2], 2.0, 4)
    feats = edge_features(pts, g)
    row = [i for i, e in enumerate(g.edges) if e == (1, 0)][0]
    assert feats[row].tolist() == [1.0, 0.0, 3.0, 1.0]

    rng = np.random.default_rng(3)
    pts = np.column_stack([rng.uniform(-3, 3, (50, 2)), rng.normal(size=50), rng.normal(size=50)])
    g = build_graph(pts[:, :2], 2.0, 16)
    feats = edge_features(pts, g)
    for k, (s, r) in enumerate(g.edges):
        d = pts[s, :3] - pts[r, :3]
        assert feats[k].tolist() == [d[0], d[1], d[2], float(np.hypot(d[0], d[1]))]
    assert edge_features(pts, g, with_distance=False).shape == (g.num_edges, 3)


def test_coincident_velocity_gives_zero_delta():
    pts = np.array([[0.0, 0.0, 4.0, 0.0], [0.3, 0.0, 4.0, 1.0]])
    g = build_graph(pts[:, :2], 1.0, 4)
    assert np.all(edge_features(pts, g)[:, 2] == 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(-8, 8), st.integers(-8, 8))
def test_translation_equivariance(seed, sx, sy):
    rng = np.random.default_rng(seed)
    # coordinates on a dyadic lattice so that translation is exact
    xy = rng.integers(-64, 64, (80, 2)) / 16.0
    pts = np.column_stack([xy, rng.normal(size=80), np.zeros(80)])
    g = build_graph(xy, 1.5, 8)
    moved = pts.copy()
    moved[:, :2] += [sx * 0.5, sy * 0.5]
    h = build_graph(moved[:, :2], 1.5, 8)
    assert g.edges == h.edges
    assert np.array_equal(edge_features(pts, g), edge_features(moved, h))


def test_batch_graphs_offsets():
    a = build_graph(np.array([[0.0, 0.0], [0.5, 0.0]]), 1.0, 4)
    b = build_graph(np.array([[0.0, 0.0], [0.2, 0.0], [9.0, 9.0]]), 1.0, 4)
    u = batch_graphs([a, b])
    assert u.num_nodes == 5
    assert sorted(u.edges) == [(0, 1), (1, 0), (2, 3), (3, 2)]
