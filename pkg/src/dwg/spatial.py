"""Octree, k-nearest-neighbour index and per-point area weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from numba import njit, prange
from scipy.spatial import cKDTree

from .core import EmptyInputError, IndexMismatchError, PointCloud

log = logging.getLogger(__name__)

ROOT_PADDING = 0.05
DEFAULT_MAX_LEAF_POINTS = 8


class KnnIndex:
    """Exact k-NN over a fixed point set.

    Results are ordered by (distance, point index), so equal distances resolve
    to the lower index, including at the k-th position.
    """

    def __init__(self, points: np.ndarray):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        if len(self.points) == 0:
            raise EmptyInputError("cannot index an empty point set")
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries, k: int, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(indices, distances)`` of shape ``(m, min(k, n))``."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        kk = min(k, n)
        if len(q) == 0:
            return np.zeros((0, kk), dtype=np.int64), np.zeros((0, kk))
        # one extra neighbour reveals rows whose k-th distance is tied
        extra = min(kk + 1, n)
        d, idx = self._tree.query(q, k=extra, workers=workers)
        d = d.reshape(len(q), extra)
        idx = idx.reshape(len(q), extra).astype(np.int64)
        order = np.lexsort((idx, d), axis=1)
        d = np.take_along_axis(d, order, axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        if extra > kk:
            tied = np.nonzero(d[:, kk] == d[:, kk - 1])[0]
            for r in tied:
                cand = np.asarray(self._tree.query_ball_point(q[r], d[r, kk - 1] * (1 + 1e-12)))
                dc = np.linalg.norm(self.points[cand] - q[r], axis=1)
                o = np.lexsort((cand, dc))[:kk]
                idx[r, :kk] = cand[o]
                d[r, :kk] = dc[o]
        return idx[:, :kk], d[:, :kk]


def build_knn(cloud: PointCloud) -> KnnIndex:
    return KnnIndex(cloud.points)


def knn(index: KnnIndex, q, k: int) -> list[tuple[int, float]]:
    idx, d = index.query(np.asarray(q, dtype=np.float64).reshape(1, 3), k)
    return [(int(i), float(x)) for i, x in zip(idx[0], d[0])]


@dataclass(frozen=True)
class WindingOctree:
    """Linear-array octree; node 0 is the root.

    Point-indexed arrays (``points``, ``areas``, ...) are stored in tree order,
    i.e. ``points[j] == cloud.points[permutation[j]]``, so every node owns the
    contiguous slice ``start[c]:end[c]``.
    """

    box_lo: np.ndarray        # (N, 3)
    box_size: np.ndarray      # (N,)
    depth: np.ndarray         # (N,)
    children: np.ndarray      # (N, 8), -1 where absent
    start: np.ndarray
    end: np.ndarray
    mass_center: np.ndarray   # (N, 3)
    aggregate_normal: np.ndarray  # (N, 3)
    far_radius: np.ndarray
    permutation: np.ndarray
    points: np.ndarray
    areas: np.ndarray
    max_depth: int
    root_lo: np.ndarray
    root_size: float

    @property
    def n_nodes(self) -> int:
        return len(self.start)

    @property
    def is_leaf(self) -> np.ndarray:
        return np.all(self.children < 0, axis=1)

    def leaves(self) -> np.ndarray:
        """Indices of the non-empty leaf nodes."""
        return np.nonzero(self.is_leaf & (self.end > self.start))[0]

    def leaf_centers(self) -> np.ndarray:
        lv = self.leaves()
        return self.box_lo[lv] + 0.5 * self.box_size[lv, None]

    def cell_size(self) -> float:
        return self.root_size / 2**self.max_depth


def root_box(points: np.ndarray) -> tuple[np.ndarray, float]:
    lo, hi = points.min(axis=0), points.max(axis=0)
    size = float(np.max(hi - lo)) * (1.0 + 2 * ROOT_PADDING)
    if size == 0.0:
        size = 1.0
    center = (lo + hi) / 2.0
    return center - size / 2.0, size


def build_octree(cloud: PointCloud, max_depth: int = 8,
                 max_leaf_points: int = DEFAULT_MAX_LEAF_POINTS) -> WindingOctree:
    if not 1 <= max_depth <= 21:
        raise ValueError("max_depth must be in [1, 21]")
    if max_leaf_points < 1:
        raise ValueError("max_leaf_points must be >= 1")
    pts = cloud.points
    n = len(pts)
    if n == 0:
        raise EmptyInputError("cannot build an octree over zero points")

    root_lo, root_size = root_box(pts)
    perm = np.arange(n, dtype=np.int64)
    box_lo = [root_lo]
    box_size = [root_size]
    depth = [0]
    start = [0]
    end = [n]
    children = [[-1] * 8]

    # breadth-first; the permutation is stably re-partitioned inside each split node
    c = 0
    while c < len(start):
        s, e, dep = start[c], end[c], depth[c]
        if e - s <= max_leaf_points or dep >= max_depth:
            c += 1
            continue
        half = box_size[c] / 2.0
        mid = box_lo[c] + half
        sub = perm[s:e]
        p = pts[sub]
        octant = ((p[:, 0] >= mid[0]).astype(np.int64)
                  | ((p[:, 1] >= mid[1]).astype(np.int64) << 1)
                  | ((p[:, 2] >= mid[2]).astype(np.int64) << 2))
        order = np.argsort(octant, kind="stable")
        perm[s:e] = sub[order]
        counts = np.bincount(octant, minlength=8)
        offset = s
        for o in range(8):
            cnt = int(counts[o])
            if cnt == 0:
                continue
            lo = box_lo[c] + half * np.array([o & 1, (o >> 1) & 1, (o >> 2) & 1], dtype=np.float64)
            children[c][o] = len(start)
            box_lo.append(lo)
            box_size.append(half)
            depth.append(dep + 1)
            start.append(offset)
            end.append(offset + cnt)
            children.append([-1] * 8)
            offset += cnt
        c += 1

    start_a = np.asarray(start, dtype=np.int64)
    end_a = np.asarray(end, dtype=np.int64)
    tp = np.ascontiguousarray(pts[perm])
    ta = np.ascontiguousarray(cloud.areas[perm])
    tn = np.ascontiguousarray(cloud.normals[perm])
    mc, rad = _mass_centers_and_radii(tp, ta, start_a, end_a)
    agg = _aggregate(tn, ta, start_a, end_a)
    return WindingOctree(
        box_lo=np.asarray(box_lo), box_size=np.asarray(box_size),
        depth=np.asarray(depth, dtype=np.int64), children=np.asarray(children, dtype=np.int64),
        start=start_a, end=end_a, mass_center=mc, aggregate_normal=agg, far_radius=rad,
        permutation=perm, points=tp, areas=ta, max_depth=int(max_depth),
        root_lo=np.asarray(root_lo), root_size=float(root_size),
    )


@njit(cache=True, parallel=True)
def _mass_centers_and_radii(pts, areas, start, end):
    m = len(start)
    mc = np.zeros((m, 3))
    rad = np.zeros(m)
    for c in prange(m):
        s, e = start[c], end[c]
        w = 0.0
        cx = cy = cz = 0.0
        for j in range(s, e):
            w += areas[j]
            cx += areas[j] * pts[j, 0]
            cy += areas[j] * pts[j, 1]
            cz += areas[j] * pts[j, 2]
        if w > 0.0:
            cx /= w
            cy /= w
            cz /= w
        else:
            cx = cy = cz = 0.0
            for j in range(s, e):
                cx += pts[j, 0]
                cy += pts[j, 1]
                cz += pts[j, 2]
            k = max(e - s, 1)
            cx /= k
            cy /= k
            cz /= k
        r2 = 0.0
        for j in range(s, e):
            dx = pts[j, 0] - cx
            dy = pts[j, 1] - cy
            dz = pts[j, 2] - cz
            d2 = dx * dx + dy * dy + dz * dz
            if d2 > r2:
                r2 = d2
        mc[c, 0] = cx
        mc[c, 1] = cy
        mc[c, 2] = cz
        rad[c] = np.sqrt(r2) if e - s > 1 else 0.0
    return mc, rad


@njit(cache=True, parallel=True)
def _aggregate(normals, areas, start, end):
    m = len(start)
    out = np.zeros((m, 3))
    for c in prange(m):
        x = y = z = 0.0
        for j in range(start[c], end[c]):
            x += areas[j] * normals[j, 0]
            y += areas[j] * normals[j, 1]
            z += areas[j] * normals[j, 2]
        out[c, 0] = x
        out[c, 1] = y
        out[c, 2] = z
    return out


def refresh_aggregates(tree: WindingOctree, cloud: PointCloud) -> WindingOctree:
    """Recompute per-node ``sum(a_i * n_i)`` for the cloud's current normals."""
    if len(cloud) != len(tree.permutation):
        raise IndexMismatchError(
            f"tree holds {len(tree.permutation)} points, cloud has {len(cloud)}")
    tn = np.ascontiguousarray(cloud.normals[tree.permutation])
    agg = _aggregate(tn, tree.areas, tree.start, tree.end)
    return replace(tree, aggregate_normal=agg)


# ---------------------------------------------------------------------------
# area weights

def compute_area_weights(cloud: PointCloud, index: KnnIndex | None = None, m: int = 15,
                         mode: str = "voronoi", return_flags: bool = False):
    """Per-point surface area estimates.

    ``voronoi``: area of the 2D Voronoi cell of each point among its ``m``
    nearest neighbours, projected onto their least-squares tangent plane and
    clipped to the bounding rectangle of the projected neighbourhood.
    ``uniform``: all ones.
    """
    n = len(cloud)
    flags = np.zeros(n, dtype=bool)
    if mode == "uniform":
        w = np.ones(n)
        return (w, flags) if return_flags else w
    if mode != "voronoi":
        raise ValueError(f"unknown area mode {mode!r}")
    if n < m + 1:
        log.warning("only %d points; need %d for voronoi weights, using uniform", n, m + 1)
        w = np.ones(n)
        return (w, flags) if return_flags else w
    if index is None:
        index = KnnIndex(cloud.points)

    idx, dist = index.query(cloud.points, m + 1)
    nb = cloud.points[idx]                       # (n, m+1, 3), self first
    centroid = nb.mean(axis=1)
    dev = nb - centroid[:, None, :]
    cov = np.einsum("nki,nkj->nij", dev, dev) / (m + 1)
    evals, evecs = np.linalg.eigh(cov)           # ascending
    e1 = evecs[:, :, 2]
    e2 = evecs[:, :, 1]
    rel = nb - cloud.points[:, None, :]
    uv = np.stack([np.einsum("nki,ni->nk", rel, e1), np.einsum("nki,ni->nk", rel, e2)], axis=2)
    w = _voronoi_cells(np.ascontiguousarray(uv))

    scale = np.maximum(evals[:, 2], 1e-300)
    degenerate = (evals[:, 1] <= 1e-10 * scale) | ~(w > 0)
    if np.any(degenerate):
        spacing = dist[degenerate, 1:].mean(axis=1)
        w[degenerate] = spacing**2
        flags[degenerate] = True
        log.warning("%d points had degenerate neighbourhoods; used mean spacing squared",
                    int(degenerate.sum()))
    return (w, flags) if return_flags else w


@njit(cache=True)
def _clip_halfplane(poly, npoly, nx, ny, c, out):
    # keep the side nx*x + ny*y <= c
    k = 0
    for i in range(npoly):
        ax, ay = poly[i, 0], poly[i, 1]
        bx, by = poly[(i + 1) % npoly, 0], poly[(i + 1) % npoly, 1]
        da = nx * ax + ny * ay - c
        db = nx * bx + ny * by - c
        if da <= 0.0:
            out[k, 0] = ax
            out[k, 1] = ay
            k += 1
        if (da < 0.0 < db) or (db < 0.0 < da):
            t = da / (da - db)
            out[k, 0] = ax + t * (bx - ax)
            out[k, 1] = ay + t * (by - ay)
            k += 1
    return k


@njit(cache=True, parallel=True)
def _voronoi_cells(uv):
    n, kk = uv.shape[0], uv.shape[1]
    areas = np.zeros(n)
    for i in prange(n):
        cap = kk + 8
        a = np.zeros((cap, 2))
        b = np.zeros((cap, 2))
        x0 = y0 = 1e300
        x1 = y1 = -1e300
        for j in range(kk):
            x0 = min(x0, uv[i, j, 0])
            x1 = max(x1, uv[i, j, 0])
            y0 = min(y0, uv[i, j, 1])
            y1 = max(y1, uv[i, j, 1])
        a[0, 0], a[0, 1] = x0, y0
        a[1, 0], a[1, 1] = x1, y0
        a[2, 0], a[2, 1] = x1, y1
        a[3, 0], a[3, 1] = x0, y1
        npoly = 4
        # coordinates are relative to the point itself, which sits at the origin
        px = py = 0.0
        for j in range(kk):
            nx = uv[i, j, 0] - px
            ny = uv[i, j, 1] - py
            if nx == 0.0 and ny == 0.0:
                continue
            mx = 0.5 * (uv[i, j, 0] + px)
            my = 0.5 * (uv[i, j, 1] + py)
            npoly = _clip_halfplane(a, npoly, nx, ny, nx * mx + ny * my, b)
            a, b = b, a
            if npoly < 3:
                break
        s = 0.0
        if npoly >= 3:
            for k in range(npoly):
                s += a[k, 0] * a[(k + 1) % npoly, 1] - a[(k + 1) % npoly, 0] * a[k, 1]
        areas[i] = 0.5 * abs(s)
    return areas
