"""Screened generalized winding numbers of oriented point clouds.

Each point contributes

    a_i * exp(-r*sqrt(lam)) * (r*sqrt(lam) + 1) * <n_i, p_i - q> / (4*pi*max(r, delta_i)**3)

with ``r = |p_i - q|``. ``lam = 0`` gives the plain winding number. The
octree evaluator replaces a whole node by one term built from its mass
center and summed area-weighted normal whenever the query is farther than
``beta`` times the node radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .core import PointCloud, as_points, normalize_cloud
from .parallel import using_threads
from .spatial import KnnIndex, WindingOctree, build_octree, compute_area_weights

FOUR_PI = 4.0 * math.pi
V_MIN = 0.0015
V_MAX = 0.015
BETA = 2.3
DELTA_K = 10


@dataclass
class KernelConfig:
    lam: float = 0.0
    delta: np.ndarray | None = None
    knn_k: int = DELTA_K
    v_min: float = V_MIN
    v_max: float = V_MAX
    beta: float = BETA

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("screening coefficient must be >= 0")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.delta is not None:
            self.delta = np.ascontiguousarray(self.delta, dtype=np.float64)

    def scaled(self, length_scale: float) -> "KernelConfig":
        """Copy with the length thresholds multiplied by ``length_scale``.

        The defaults assume a unit-diagonal cloud; use this to evaluate
        a cloud in its own units.
        """
        d = None if self.delta is None else self.delta * length_scale
        return KernelConfig(self.lam / length_scale**2, d, self.knn_k,
                            self.v_min * length_scale, self.v_max * length_scale, self.beta)

    def deltas_for(self, n: int) -> np.ndarray:
        if self.delta is None:
            return np.zeros(n)
        if len(self.delta) != n:
            raise ValueError(f"{len(self.delta)} deltas for {n} points")
        return self.delta


@dataclass
class WindingField:
    query_points: np.ndarray
    values: np.ndarray
    iso_value: float

    def __post_init__(self):
        if len(self.query_points) != len(self.values):
            raise ValueError("one value per query point required")


def compute_deltas(cloud: PointCloud, index: KnnIndex, cfg: KernelConfig) -> np.ndarray:
    """Mean distance to the ``knn_k`` neighbours lying within ``[v_min, v_max]``."""
    n = len(cloud)
    if n == 1:
        return np.full(1, cfg.v_min)
    idx, dist = index.query(cloud.points, cfg.knn_k + 1)
    own = idx == np.arange(n)[:, None]
    # drop self; if a duplicate outranked self, drop the last column instead
    keep = ~own
    no_self = ~own.any(axis=1)
    keep[no_self, -1] = False
    d = dist[keep].reshape(n, -1)
    ok = (d >= cfg.v_min) & (d <= cfg.v_max)
    cnt = ok.sum(axis=1)
    s = np.where(ok, d, 0.0).sum(axis=1)
    return np.where(cnt > 0, s / np.maximum(cnt, 1), cfg.v_min)


def screening_factor(r, lam: float):
    """``exp(-r*sqrt(lam)) * (r*sqrt(lam) + 1)``."""
    s = math.sqrt(lam)
    r = np.asarray(r, dtype=np.float64)
    return np.exp(-r * s) * (r * s + 1.0)


@njit(cache=True, inline="always")
def _term(ax, ay, az, px, py, pz, qx, qy, qz, delta, sl):
    # ax..az is a_i * n_i, or a node's aggregate normal
    dx = px - qx
    dy = py - qy
    dz = pz - qz
    r = math.sqrt(dx * dx + dy * dy + dz * dz)
    rh = r if r > delta else delta
    if rh == 0.0:
        return 0.0
    rs = r * sl
    return math.exp(-rs) * (rs + 1.0) * (ax * dx + ay * dy + az * dz) / (FOUR_PI * rh * rh * rh)


@njit(cache=True)
def _brute_one(pts, nrm, areas, deltas, sl, qx, qy, qz):
    total = 0.0
    for i in range(len(pts)):
        a = areas[i]
        total += _term(a * nrm[i, 0], a * nrm[i, 1], a * nrm[i, 2],
                       pts[i, 0], pts[i, 1], pts[i, 2], qx, qy, qz, deltas[i], sl)
    return total


@njit(cache=True, parallel=True)
def _brute_many(pts, nrm, areas, deltas, sl, q):
    out = np.empty(len(q))
    for j in prange(len(q)):
        out[j] = _brute_one(pts, nrm, areas, deltas, sl, q[j, 0], q[j, 1], q[j, 2])
    return out


@njit(cache=True)
def _terms(an, p, q, delta, sl):
    out = np.empty(len(p))
    for i in range(len(p)):
        out[i] = _term(an[i, 0], an[i, 1], an[i, 2], p[i, 0], p[i, 1], p[i, 2],
                       q[i, 0], q[i, 1], q[i, 2], delta[i], sl)
    return out


def kernel_terms(area_normals, points, queries, lam: float, delta=None) -> np.ndarray:
    """Single-point contributions for paired rows of ``points`` and ``queries``."""
    p, q = as_points(points), as_points(queries)
    an = np.ascontiguousarray(np.asarray(area_normals, dtype=np.float64).reshape(-1, 3))
    d = np.zeros(len(p)) if delta is None else np.ascontiguousarray(delta, dtype=np.float64)
    if not len(p) == len(q) == len(an) == len(d):
        raise ValueError("paired inputs must have equal length")
    return _terms(an, np.ascontiguousarray(p), np.ascontiguousarray(q), d, math.sqrt(lam))


@njit(cache=True)
def _fast_one(children, is_leaf, start, end, mc, agg, rad, node_delta, pts, nrm, areas, deltas,
              sl, beta, qx, qy, qz, stack):
    total = 0.0
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        c = stack[top]
        cnt = end[c] - start[c]
        if cnt == 0:
            continue
        dx = mc[c, 0] - qx
        dy = mc[c, 1] - qy
        dz = mc[c, 2] - qz
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        if cnt > 1 and d > beta * rad[c] and d > node_delta[c]:
            total += _term(agg[c, 0], agg[c, 1], agg[c, 2], mc[c, 0], mc[c, 1], mc[c, 2],
                           qx, qy, qz, 0.0, sl)
            continue
        if is_leaf[c]:
            for i in range(start[c], end[c]):
                a = areas[i]
                total += _term(a * nrm[i, 0], a * nrm[i, 1], a * nrm[i, 2],
                               pts[i, 0], pts[i, 1], pts[i, 2], qx, qy, qz, deltas[i], sl)
        else:
            # push in reverse so children pop in octant order
            for o in range(7, -1, -1):
                ch = children[c, o]
                if ch >= 0:
                    stack[top] = ch
                    top += 1
    return total


@njit(cache=True, parallel=True)
def _fast_many(children, is_leaf, start, end, mc, agg, rad, node_delta, pts, nrm, areas, deltas,
               sl, beta, q, max_depth):
    out = np.empty(len(q))
    for j in prange(len(q)):
        stack = np.empty(8 * (max_depth + 2), dtype=np.int64)
        out[j] = _fast_one(children, is_leaf, start, end, mc, agg, rad, node_delta, pts, nrm,
                           areas, deltas, sl, beta, q[j, 0], q[j, 1], q[j, 2], stack)
    return out


@njit(cache=True)
def _node_max_delta(start, end, deltas):
    m = len(start)
    out = np.zeros(m)
    for c in range(m):
        v = 0.0
        for i in range(start[c], end[c]):
            if deltas[i] > v:
                v = deltas[i]
        out[c] = v
    return out


def _queries(q) -> np.ndarray:
    return np.ascontiguousarray(as_points(q))


def gwn_brute_many(cloud: PointCloud, queries, cfg: KernelConfig, threads: int | None = None):
    q = _queries(queries)
    with using_threads(threads):
        return _brute_many(cloud.points, cloud.normals, cloud.areas,
                           cfg.deltas_for(len(cloud)), math.sqrt(cfg.lam), q)


def gwn_brute(cloud: PointCloud, q, cfg: KernelConfig) -> float:
    q = np.asarray(q, dtype=np.float64).reshape(3)
    return float(_brute_one(cloud.points, cloud.normals, cloud.areas,
                            cfg.deltas_for(len(cloud)), math.sqrt(cfg.lam), q[0], q[1], q[2]))


class FastEvaluator:
    """Tree-order arrays prepared once per (tree, normals, deltas) state."""

    def __init__(self, tree: WindingOctree, cloud: PointCloud, cfg: KernelConfig):
        perm = tree.permutation
        self.tree = tree
        self.cfg = cfg
        self.nrm = np.ascontiguousarray(cloud.normals[perm])
        self.deltas = np.ascontiguousarray(cfg.deltas_for(len(cloud))[perm])
        self.node_delta = _node_max_delta(tree.start, tree.end, self.deltas)
        self.is_leaf = np.ascontiguousarray(tree.is_leaf)
        self.beta = math.inf if math.isinf(cfg.beta) else float(cfg.beta)

    def __call__(self, queries, threads: int | None = None) -> np.ndarray:
        t = self.tree
        q = _queries(queries)
        with using_threads(threads):
            return _fast_many(t.children, self.is_leaf, t.start, t.end, t.mass_center,
                              t.aggregate_normal, t.far_radius, self.node_delta, t.points,
                              self.nrm, t.areas, self.deltas, math.sqrt(self.cfg.lam), self.beta,
                              q, int(t.depth.max()))


def gwn_fast(tree: WindingOctree, cloud: PointCloud, q, cfg: KernelConfig) -> float:
    return float(FastEvaluator(tree, cloud, cfg)(np.asarray(q, dtype=np.float64).reshape(1, 3))[0])


def evaluate_field(tree: WindingOctree, cloud: PointCloud, queries, cfg: KernelConfig,
                   iso_subset=None, threads: int | None = None,
                   evaluator: FastEvaluator | None = None) -> WindingField:
    """Sample the field at ``queries``; the iso value averages ``iso_subset`` (default all)."""
    q = _queries(queries)
    if len(q) == 0:
        raise ValueError("no query points")
    ev = evaluator or FastEvaluator(tree, cloud, cfg)
    vals = ev(q, threads)
    sub = vals if iso_subset is None else vals[iso_subset]
    return WindingField(q, vals, float(np.mean(sub)))


def outward_gradient(evaluate, points, h: float) -> np.ndarray:
    """Central-difference ``-grad w`` at ``points``.

    The field is high inside a surface with outward normals, so the
    descent direction is the one that lines up with those normals.
    """
    p = as_points(points)
    g = np.empty_like(p)
    for ax in range(3):
        e = np.zeros(3)
        e[ax] = h
        g[:, ax] = -(evaluate(p + e) - evaluate(p - e)) / (2 * h)
    return g


def gradient_alignment(evaluate, points, normals, h: float) -> np.ndarray:
    """Per-point dot of unit(-grad w) with the given normals."""
    g = outward_gradient(evaluate, points, h)
    nrm = np.linalg.norm(g, axis=1)
    ok = nrm > 0
    out = np.zeros(len(g))
    out[ok] = np.einsum("ij,ij->i", g[ok] / nrm[ok, None], np.asarray(normals)[ok])
    return out


def kernel_for_cloud(cloud: PointCloud, lam: float = 0.0, **kw) -> KernelConfig:
    """Kernel with per-point deltas for a cloud in its own units.

    Deltas and ``lam`` are set in the unit-diagonal frame, then rescaled.
    """
    nc, tf = normalize_cloud(cloud)
    cfg = KernelConfig(lam, **kw)
    cfg.delta = compute_deltas(nc, KnnIndex(nc.points), cfg)
    return cfg.scaled(1.0 / tf.scale)


def probe_field(cloud: PointCloud, queries, lam: float = 0.0, brute: bool = False,
                area_mode: str = "voronoi", depth: int = 8, threads: int | None = None) -> np.ndarray:
    """Field of an oriented cloud at ``queries``, both given in the cloud's own frame.

    Thresholds and ``lam`` refer to the unit-diagonal frame, as in reconstruction.
    """
    nc, tf = normalize_cloud(cloud)
    index = KnnIndex(nc.points)
    nc = nc.with_areas(compute_area_weights(nc, index, mode=area_mode))
    cfg = KernelConfig(lam)
    cfg.delta = compute_deltas(nc, index, cfg)
    q = tf.apply(_queries(queries))
    if brute:
        return gwn_brute_many(nc, q, cfg, threads)
    return FastEvaluator(build_octree(nc, depth), nc, cfg)(q, threads)
