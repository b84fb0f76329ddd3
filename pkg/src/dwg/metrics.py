"""Evaluation: Chamfer distance, mesh topology and input corruption."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .core import PointCloud, RngSeed, TriangleMesh, as_points, make_rng
from .fixtures import sample_sphere, sample_torus

CHAMFER_SAMPLES = 100_000


def sample_mesh(mesh: TriangleMesh, n: int, seed: RngSeed | int = 0) -> np.ndarray:
    """Area-uniform samples on the mesh surface."""
    if mesh.n_faces == 0:
        raise ValueError("cannot sample an empty mesh")
    rng = make_rng(seed)
    tri = mesh.vertices[mesh.faces]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    face = rng.choice(len(area), size=n, p=area / area.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    t = tri[face]
    return t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])


def mesh_area(mesh: TriangleMesh) -> float:
    tri = mesh.vertices[mesh.faces]
    return float(0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1).sum())


def chamfer(a, b) -> float:
    """Symmetric mean nearest-neighbour distance, ``(mean a->b + mean b->a) / 2``."""
    a, b = as_points(a), as_points(b)
    dab, _ = cKDTree(b).query(a)
    dba, _ = cKDTree(a).query(b)
    return 0.5 * (float(dab.mean()) + float(dba.mean()))


def reference_samples(shape: str, n: int = CHAMFER_SAMPLES, seed: RngSeed | int = 12345, **params) -> np.ndarray:
    if shape == "sphere":
        return sample_sphere(n, params.get("radius", 1.0), seed).points
    if shape == "torus":
        return sample_torus(n, params.get("R", 0.3), params.get("r", 0.12), seed).points
    raise ValueError(f"no analytic reference for {shape!r}")


def chamfer_to_shape(mesh: TriangleMesh, shape: str, n: int = CHAMFER_SAMPLES,
                     seed: RngSeed | int = 0, **params) -> float:
    """Chamfer between ``n`` mesh samples and ``n`` analytic-surface samples."""
    ref = reference_samples(shape, n, make_rng(seed).integers(2**62), **params)
    return chamfer(sample_mesh(mesh, n, seed), ref)


def chamfer_meshes(a: TriangleMesh, b: TriangleMesh, n: int = CHAMFER_SAMPLES, seed: RngSeed | int = 0) -> float:
    return chamfer(sample_mesh(a, n, seed), sample_mesh(b, n, make_rng(seed).integers(2**62)))


# ---------------------------------------------------------------------------
# topology

def closest_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest point on each triangle ``(a, b, c)`` to the matching row of ``p`` (Ericson's regions)."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = np.einsum("ij,ij->i", ab, ap), np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3, d4 = np.einsum("ij,ij->i", ab, bp), np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5, d6 = np.einsum("ij,ij->i", ab, cp), np.einsum("ij,ij->i", ac, cp)
    va, vb, vc = d3 * d6 - d5 * d4, d5 * d2 - d1 * d6, d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v, w = vb / denom, vc / denom
        out = a + v[:, None] * ab + w[:, None] * ac
        cases = [
            (d1 <= 0) & (d2 <= 0), (d3 >= 0) & (d4 <= d3), (d6 >= 0) & (d5 <= d6),
            (vc <= 0) & (d1 >= 0) & (d3 <= 0), (vb <= 0) & (d2 >= 0) & (d6 <= 0),
            (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
        ]
        edge_ab = a + (d1 / (d1 - d3))[:, None] * ab
        edge_ac = a + (d2 / (d2 - d6))[:, None] * ac
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        edge_bc = b + t[:, None] * (c - b)
    # later regions are overridden by earlier ones, matching the sequential tests
    for mask, val in reversed(list(zip(cases, [a, b, c, edge_ab, edge_ac, edge_bc]))):
        out = np.where(mask[:, None], val, out)
    return out


def point_mesh_distance(points, mesh: TriangleMesh, candidates: int = 32) -> np.ndarray:
    """Distance from each point to the mesh, searching the faces with the nearest centroids."""
    pts = as_points(points)
    tri = mesh.vertices[mesh.faces]
    k = min(candidates, len(tri))
    _, idx = cKDTree(tri.mean(axis=1)).query(pts, k=k)
    idx = idx.reshape(len(pts), k)
    rep = np.repeat(pts, k, axis=0)
    t = tri[idx.ravel()]
    q = closest_on_triangles(rep, t[:, 0], t[:, 1], t[:, 2])
    return np.linalg.norm(q - rep, axis=1).reshape(len(pts), k).min(axis=1)


def edge_counts(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    """Unique undirected edges and how many faces use each."""
    f = mesh.faces
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0, return_counts=True)


def is_closed(mesh: TriangleMesh) -> bool:
    if mesh.n_faces == 0:
        return False
    _, counts = edge_counts(mesh)
    return bool(np.all(counts == 2))


def euler_characteristic(mesh: TriangleMesh) -> int:
    edges, _ = edge_counts(mesh)
    n_vert = len(np.unique(mesh.faces))
    return int(n_vert - len(edges) + mesh.n_faces)


def n_components(mesh: TriangleMesh) -> int:
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    used = np.unique(mesh.faces)
    remap = np.full(len(mesh.vertices), -1)
    remap[used] = np.arange(len(used))
    f = remap[mesh.faces]
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]]])
    g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(len(used), len(used)))
    return int(connected_components(g, directed=False)[0])


def genus(mesh: TriangleMesh) -> float:
    """Total genus of a closed mesh: ``components - chi / 2``."""
    return n_components(mesh) - euler_characteristic(mesh) / 2.0


def signed_volume(mesh: TriangleMesh) -> float:
    t = mesh.vertices[mesh.faces]
    return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)


def mean_normal_agreement(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.einsum("ij,ij->i", a, b)))


# ---------------------------------------------------------------------------
# corruption

def corrupt(cloud: PointCloud, noise_pct: float = 0.0, outlier_pct: float = 0.0,
            seed: RngSeed | int = 0, return_mask: bool = False):
    """Add Gaussian noise and uniform outliers.

    Noise has per-coordinate sigma ``noise_pct / 100 * diagonal``. Outliers
    number ``round(outlier_pct / 100 * n)`` and are uniform in the bounding
    box scaled 1.1x about its centre; they get random normals and the mean
    input area. The returned mask is True for outliers.
    """
    if noise_pct < 0 or outlier_pct < 0:
        raise ValueError("percentages must be non-negative")
    rng = make_rng(seed)
    p = cloud.points.copy()
    n = len(p)
    if noise_pct > 0:
        p += rng.normal(0.0, noise_pct / 100.0 * cloud.bbox_diagonal, size=p.shape)
    m = int(round(outlier_pct / 100.0 * n))
    lo, hi = cloud.points.min(axis=0), cloud.points.max(axis=0)
    c, half = 0.5 * (lo + hi), 0.55 * (hi - lo)
    out = c + (2.0 * rng.random((m, 3)) - 1.0) * half
    nrm = rng.standard_normal((m, 3))
    nrm /= np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-300)
    pts = np.vstack([p, out])
    normals = np.vstack([cloud.normals, nrm])
    areas = np.concatenate([cloud.areas, np.full(m, cloud.areas.mean())])
    res = PointCloud(pts, normals, areas)
    mask = np.zeros(n + m, dtype=bool)
    mask[n:] = True
    return (res, mask) if return_mask else res
