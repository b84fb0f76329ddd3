import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from dwg import IndexMismatchError, PointCloud
from dwg.spatial import KnnIndex, build_octree, compute_area_weights, knn, refresh_aggregates


def random_cloud(n, seed=0, areas=None):
    r = np.random.default_rng(seed)
    return PointCloud.from_points(r.random((n, 3)), r.standard_normal((n, 3)),
                                  r.random(n) + 0.1 if areas is None else areas)


# --- k-NN ---------------------------------------------------------------------

def test_self_query_distance_zero():
    p = np.random.default_rng(0).random((50, 3))
    res = knn(KnnIndex(p), p[17], 1)
    assert res == [(17, 0.0)]


def test_k_larger_than_n_returns_all():
    p = np.random.default_rng(0).random((5, 3))
    res = knn(KnnIndex(p), [0.5, 0.5, 0.5], 12)
    assert sorted(i for i, _ in res) == list(range(5))
    d = [x for _, x in res]
    assert d == sorted(d)


def test_knn_matches_linear_scan():
    r = np.random.default_rng(3)
    p, q = r.random((1000, 3)), r.random((100, 3))
    idx, dist = KnnIndex(p).query(q, 10)
    full = np.linalg.norm(p[None] - q[:, None], axis=2)
    ref = np.argsort(full, axis=1, kind="stable")[:, :10]
    for a, b in zip(idx, ref):
        assert set(a) == set(b)
    assert np.allclose(dist, np.take_along_axis(full, ref, 1), atol=1e-15)


def test_knn_ties_resolve_to_lower_index():
    # 6 points equidistant from the origin; k=3 must pick indices 0, 1, 2
    p = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1.0]])
    order = [5, 3, 1, 0, 4, 2]
    idx, _ = KnnIndex(p[order]).query([0, 0, 0], 3)
    assert list(idx[0]) == [0, 1, 2]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(1, 20), st.integers(0, 2**31))
def test_knn_shape_and_sorted(n, k, seed):
    r = np.random.default_rng(seed)
    p = np.round(r.random((n, 3)), 1)  # coarse grid forces duplicates and ties
    idx, d = KnnIndex(p).query(r.random((7, 3)), k)
    assert idx.shape == (7, min(k, n))
    assert np.all(np.diff(d, axis=1) >= 0)
    assert all(len(set(row)) == len(row) for row in idx)


# --- octree -------------------------------------------------------------------

def test_single_point_tree():
    c = PointCloud.from_points([[0.2, 0.3, 0.4]])
    t = build_octree(c, max_depth=5)
    assert t.n_nodes == 1 and t.is_leaf[0]
    assert t.far_radius[0] == 0.0
    assert np.allclose(t.mass_center[0], [0.2, 0.3, 0.4])


def test_cube_corners_split_into_eight_leaves():
    corners = np.array([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], dtype=float)
    t = build_octree(PointCloud.from_points(corners), max_depth=1, max_leaf_points=1)
    lv = t.leaves()
    assert len(lv) == 8
    assert np.all(t.end[lv] - t.start[lv] == 1)


def test_octree_structure_random_10k():
    c = random_cloud(10_000, seed=5)
    t = build_octree(c, max_depth=8)
    lv = t.leaves()
    owner = np.full(len(c), -1)
    for leaf in lv:
        assert np.all(owner[t.start[leaf]:t.end[leaf]] == -1)
        owner[t.start[leaf]:t.end[leaf]] = leaf
    assert np.all(owner >= 0)
    assert sorted(t.permutation) == list(range(len(c)))
    assert np.array_equal(t.points, c.points[t.permutation])

    parents = np.zeros(t.n_nodes, dtype=int)
    for node in range(t.n_nodes):
        kids = t.children[node][t.children[node] >= 0]
        parents[kids] += 1
        if len(kids):
            spans = sorted((t.start[k], t.end[k]) for k in kids)
            assert spans[0][0] == t.start[node] and spans[-1][1] == t.end[node]
            assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
        # each point sits inside its node's box and its far-field ball
        p = t.points[t.start[node]:t.end[node]]
        assert np.all(p >= t.box_lo[node] - 1e-12)
        assert np.all(p <= t.box_lo[node] + t.box_size[node] + 1e-12)
        r = np.linalg.norm(p - t.mass_center[node], axis=1)
        assert np.all(r <= t.far_radius[node] + 1e-12)
        assert (t.far_radius[node] == 0.0) == (len(np.unique(p, axis=0)) <= 1)
    assert parents[0] == 0 and np.all(parents[1:] == 1)


def test_parent_radius_bounds_child_for_nested_shells():
    # concentric shells: every node's children are symmetric around the same centre
    r = np.random.default_rng(2)
    d = r.standard_normal((4000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = np.vstack([d, 0.5 * d])
    t = build_octree(PointCloud.from_points(pts), max_depth=1, max_leaf_points=1)
    assert t.far_radius[0] == pytest.approx(1.0, abs=3e-2)
    kids = t.children[0][t.children[0] >= 0]
    assert np.all(t.far_radius[kids] <= t.far_radius[0])


def test_aggregates_match_brute_force():
    c = random_cloud(3000, seed=9)
    t = build_octree(c, max_depth=6)
    an = c.areas[:, None] * c.normals
    for node in range(t.n_nodes):
        ids = t.permutation[t.start[node]:t.end[node]]
        assert np.allclose(t.aggregate_normal[node], an[ids].sum(0), atol=1e-12, rtol=0)


def test_refresh_flip_negates_aggregates():
    c = random_cloud(2000, seed=1)
    t = build_octree(c, max_depth=6)
    t2 = refresh_aggregates(t, c.with_normals(-c.normals))
    assert np.allclose(t2.aggregate_normal, -t.aggregate_normal, atol=1e-12, rtol=0)
    assert np.array_equal(t2.mass_center, t.mass_center)


def test_zero_area_points_contribute_nothing():
    c = random_cloud(500, seed=4)
    areas = c.areas.copy()
    areas[::2] = 0.0
    c0 = c.with_areas(areas)
    t = build_octree(c0, max_depth=5)
    changed = c0.normals.copy()
    changed[::2] = -changed[::2]
    t2 = refresh_aggregates(t, c0.with_normals(changed))
    assert np.allclose(t.aggregate_normal, t2.aggregate_normal, atol=1e-14)


def test_refresh_rejects_size_mismatch():
    c = random_cloud(100)
    t = build_octree(c, max_depth=3)
    with pytest.raises(IndexMismatchError):
        refresh_aggregates(t, random_cloud(99))


# --- area weights -------------------------------------------------------------

def test_uniform_weights_are_one():
    c = random_cloud(200)
    assert np.array_equal(compute_area_weights(c, mode="uniform"), np.ones(200))


def grid_cloud(h=0.01, m=30):
    g = np.arange(m) * h
    x, y = np.meshgrid(g, g, indexing="ij")
    # small jitter-free lattice in the z=0 plane
    return PointCloud.from_points(np.stack([x.ravel(), y.ravel(), np.zeros(x.size)], axis=1))


def test_voronoi_weight_of_square_lattice():
    h, m = 0.01, 30
    c = grid_cloud(h, m)
    w = compute_area_weights(c, m=15, mode="voronoi")
    ij = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"), -1).reshape(-1, 2)
    interior = np.all((ij >= 3) & (ij < m - 3), axis=1)
    assert np.allclose(w[interior], h * h, rtol=0.05)


def test_voronoi_rotation_invariant():
    r = np.random.default_rng(6)
    d = r.standard_normal((800, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    c = PointCloud.from_points(d)
    R = Rotation.from_euler("xyz", [0.3, -1.1, 2.0]).as_matrix()
    w1 = compute_area_weights(c, mode="voronoi")
    w2 = compute_area_weights(PointCloud.from_points(d @ R.T), mode="voronoi")
    assert np.allclose(w1, w2, atol=1e-9, rtol=0)


def test_voronoi_sphere_weights_sum_to_area():
    r = np.random.default_rng(8)
    d = r.standard_normal((5000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    w = compute_area_weights(PointCloud.from_points(d), mode="voronoi")
    assert w.sum() == pytest.approx(4 * np.pi, rel=0.05)


def test_collinear_neighbourhood_flagged():
    p = np.zeros((40, 3))
    p[:, 0] = np.arange(40) * 0.1
    w, flags = compute_area_weights(PointCloud.from_points(p), mode="voronoi", return_flags=True)
    assert flags.all()
    assert np.allclose(w, w[0]) or np.all(w > 0)
