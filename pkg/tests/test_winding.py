import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dwg import PointCloud, normalize_cloud
from dwg.spatial import KnnIndex, build_octree
from dwg.winding import (FastEvaluator, KernelConfig, compute_deltas, evaluate_field,
                         gradient_alignment, gwn_brute, gwn_brute_many, gwn_fast,
                         kernel_for_cloud, kernel_terms, probe_field, screening_factor)


def numpy_gwn(cloud, q, lam=0.0, delta=None):
    """Direct numpy summation, independent of the compiled kernels."""
    q = np.atleast_2d(q)
    d = np.zeros(len(cloud)) if delta is None else delta
    diff = cloud.points[None, :, :] - q[:, None, :]
    r = np.linalg.norm(diff, axis=2)
    rh = np.maximum(r, d[None, :])
    s = math.sqrt(lam)
    dot = np.einsum("mni,ni->mn", diff, cloud.normals)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = cloud.areas * np.exp(-r * s) * (r * s + 1) * dot / (4 * np.pi * rh**3)
    return np.where(rh > 0, t, 0.0).sum(axis=1)


def random_oriented(n, seed):
    r = np.random.default_rng(seed)
    return PointCloud.from_points(r.random((n, 3)), r.standard_normal((n, 3)), r.random(n))


# --- configuration and deltas --------------------------------------------------

def test_kernel_config_validation():
    with pytest.raises(ValueError):
        KernelConfig(lam=-1)
    with pytest.raises(ValueError):
        KernelConfig(v_min=0.1, v_max=0.01)
    with pytest.raises(ValueError):
        KernelConfig(beta=0)


def test_isolated_point_delta_is_v_min():
    p = np.array([[0, 0, 0], [0.5, 0, 0], [0, 0.5, 0], [0.5, 0.5, 0.5]])
    c = PointCloud.from_points(p)
    cfg = KernelConfig()
    d = compute_deltas(c, KnnIndex(p), cfg)
    assert np.all(d == cfg.v_min)


def _lattice_delta(h, k):
    # mean of the k nearest offsets of an interior node of the square lattice
    r = np.arange(-3, 4)
    off = np.stack(np.meshgrid(r, r, indexing="ij"), -1).reshape(-1, 2)
    return (np.sort(np.linalg.norm(off, axis=1))[1:k + 1] * h).mean()


def test_lattice_delta():
    h = 0.005
    g = np.arange(20) * h
    x, y = np.meshgrid(g, g, indexing="ij")
    p = np.stack([x.ravel(), y.ravel(), np.zeros(x.size)], axis=1)
    d = compute_deltas(PointCloud.from_points(p), KnnIndex(p), KernelConfig(knn_k=10))
    interior = np.all((p[:, :2] > 2.5 * h) & (p[:, :2] < 16.5 * h), axis=1)
    assert np.all(d[interior] >= h)
    assert np.all(d[interior] <= h * math.sqrt(2) * 1.01)
    # 4 axis + 4 diagonal neighbours + 2 of the next shell
    assert np.allclose(d[interior], _lattice_delta(h, 10), rtol=1e-12)


def test_deltas_deterministic():
    c = random_oriented(500, 3)
    idx = KnnIndex(c.points)
    assert np.array_equal(compute_deltas(c, idx, KernelConfig()), compute_deltas(c, idx, KernelConfig()))


def test_deltas_within_bounds():
    c = random_oriented(2000, 4)
    d = compute_deltas(c, KnnIndex(c.points), KernelConfig())
    assert np.all((d >= 0.0015) & (d <= 0.015))


# --- brute force --------------------------------------------------------------

def test_brute_matches_numpy_oracle():
    c = random_oriented(1000, 1)
    q = np.random.default_rng(2).random((50, 3)) * 1.4 - 0.2
    delta = np.random.default_rng(3).random(1000) * 0.01
    for lam in (0.0, 10.0, 400.0):
        cfg = KernelConfig(lam, delta)
        assert np.allclose(gwn_brute_many(c, q, cfg), numpy_gwn(c, q, lam, delta), atol=1e-12, rtol=0)


def test_query_on_a_point_with_zero_delta():
    c = PointCloud.from_points([[0, 0, 0], [1, 0, 0]])
    assert math.isfinite(gwn_brute(c, [0, 0, 0], KernelConfig()))


def test_sphere_inside_outside(sphere_10242):
    cfg = kernel_for_cloud(sphere_10242)
    assert gwn_brute(sphere_10242, [0, 0, 0], cfg) == pytest.approx(1.0, abs=0.02)
    assert gwn_brute(sphere_10242, [10, 0, 0], cfg) == pytest.approx(0.0, abs=1e-3)


def test_lambda_continuity_at_zero(sphere_10k):
    q = np.random.default_rng(0).uniform(-2, 2, (100, 3))
    a = gwn_brute_many(sphere_10k, q, KernelConfig(0.0))
    b = gwn_brute_many(sphere_10k, q, KernelConfig(1e-12))
    assert np.allclose(a, b, atol=1e-6, rtol=0)


def test_unscreened_kernel_terms_match_standard_kernel():
    r = np.random.default_rng(11)
    an, p, q = r.standard_normal((3, 10_000, 3))
    d = r.random(10_000) * 0.05
    got = kernel_terms(an, p, q, 0.0, d)
    diff = p - q
    rh = np.maximum(np.linalg.norm(diff, axis=1), d)
    ref = np.einsum("ij,ij->i", an, diff) / (4 * np.pi * rh**3)
    # per-term agreement, relative to the term's magnitude
    assert np.max(np.abs(got - ref) / np.maximum(1.0, np.abs(ref))) <= 1e-15


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.0, 500.0))
def test_screening_factor_bounded_and_decreasing(r, lam):
    f = screening_factor(r, lam)
    assert 0.0 < f <= 1.0
    assert screening_factor(r, lam + 10.0) <= f


# --- octree evaluator ---------------------------------------------------------

def test_single_leaf_tree_bit_identical():
    c = random_oriented(6, 5)
    tree = build_octree(c, max_depth=8, max_leaf_points=8)
    assert tree.n_nodes == 1
    cfg = KernelConfig(10.0, np.full(6, 0.002))
    for q in np.random.default_rng(1).random((20, 3)):
        assert gwn_fast(tree, c, q, cfg) == gwn_brute(c, q, cfg)


def test_infinite_beta_is_exact(sphere_10k):
    tree = build_octree(sphere_10k, max_depth=7)
    q = np.random.default_rng(7).uniform(-1.5, 1.5, (200, 3))
    cfg = kernel_for_cloud(sphere_10k, 10.0, beta=math.inf)
    fast = FastEvaluator(tree, sphere_10k, cfg)(q)
    assert np.allclose(fast, gwn_brute_many(sphere_10k, q, cfg), atol=1e-12, rtol=0)


@pytest.mark.xfail(strict=True, reason="order-0 aggregation at beta=2.3 leaves ~1e-2 errors; "
                   "see notes/decisions.md")
def test_far_field_error_away_from_surface(sphere_10k):
    # queries more than 0.1 (unit-diagonal frame) from the surface
    nc, _ = normalize_cloud(sphere_10k)
    cfg = KernelConfig(0.0)
    cfg.delta = compute_deltas(nc, KnnIndex(nc.points), cfg)
    tree = build_octree(nc, 8)
    r = np.random.default_rng(3)
    q = r.uniform(-0.6, 0.6, (20_000, 3))
    R = np.linalg.norm(nc.points, axis=1).mean()
    q = q[np.abs(np.linalg.norm(q, axis=1) - R) > 0.1][:1000]
    err = np.abs(FastEvaluator(tree, nc, cfg)(q) - gwn_brute_many(nc, q, cfg))
    assert np.mean(err <= 1e-3) >= 0.99


def test_single_far_query_sets_iso():
    c = random_oriented(500, 8)
    tree = build_octree(c, 5)
    f = evaluate_field(tree, c, [[50.0, 0, 0]], KernelConfig())
    assert abs(f.values[0]) < 1e-3 and f.iso_value == f.values[0]


def test_serial_and_parallel_agree(sphere_10k):
    tree = build_octree(sphere_10k, 7)
    cfg = KernelConfig(10.0)
    ev = FastEvaluator(tree, sphere_10k, cfg)
    q = np.random.default_rng(1).uniform(-1.5, 1.5, (3000, 3))
    assert np.max(np.abs(ev(q, threads=1) - ev(q, threads=4))) <= 1e-14


def test_leaf_center_mean_between_zero_and_one(sphere_10k):
    cfg = kernel_for_cloud(sphere_10k)
    tree = build_octree(sphere_10k, 7)
    f = evaluate_field(tree, sphere_10k, tree.leaf_centers(), cfg)
    assert 0.0 < f.iso_value < 1.0


def test_gradient_of_field_aligns_with_normals(sphere_10k):
    nc, _ = normalize_cloud(sphere_10k)
    cfg = KernelConfig(10.0)
    cfg.delta = compute_deltas(nc, KnnIndex(nc.points), cfg)
    ev = FastEvaluator(build_octree(nc, 7), nc, cfg)
    sel = np.arange(0, len(nc), 50)
    dots = gradient_alignment(ev, nc.points[sel], nc.normals[sel], h=1e-3)
    assert dots.mean() >= 0.95


def test_probe_field_is_frame_independent(sphere_10k):
    q = np.array([[0.0, 0, 0], [0.3, 0.2, 0.1], [3.0, 0, 0]])
    a = probe_field(sphere_10k, q, lam=10.0, brute=True)
    moved = PointCloud(sphere_10k.points * 7.0 + 2.0, sphere_10k.normals, sphere_10k.areas)
    b = probe_field(moved, q * 7.0 + 2.0, lam=10.0, brute=True)
    assert np.allclose(a, b, atol=1e-9)
