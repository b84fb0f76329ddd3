"""Starting normals for the diffusion: random, PCA or Gauss map."""

from __future__ import annotations

import logging

import numpy as np

from .core import PointCloud, RngSeed, make_rng
from .spatial import KnnIndex

log = logging.getLogger(__name__)

PCA_K = 15


def random_unit_vectors(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    norm = np.linalg.norm(v, axis=1)
    # a zero draw has probability ~0 but must not produce NaNs
    while np.any(norm == 0.0):
        bad = norm == 0.0
        v[bad] = rng.standard_normal((int(bad.sum()), 3))
        norm = np.linalg.norm(v, axis=1)
    return v / norm[:, None]


def init_random(cloud: PointCloud, seed: RngSeed | int = 0) -> PointCloud:
    return cloud.with_normals(random_unit_vectors(len(cloud), make_rng(seed)))


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    # make the largest-magnitude component positive; argmax picks x first on ties
    big = np.argmax(np.abs(v), axis=1)
    s = np.sign(v[np.arange(len(v)), big])
    s[s == 0] = 1.0
    return v * s[:, None]


def init_pca(cloud: PointCloud, index: KnnIndex | None = None, k: int = PCA_K,
             seed: RngSeed | int = 0, return_flags: bool = False):
    """Smallest-eigenvalue direction of each point's k-neighbourhood covariance.

    Signs are arbitrary up to a deterministic canonical choice. Points whose
    neighbourhood is (nearly) collinear get a random normal and are flagged.
    """
    n = len(cloud)
    if n <= k:
        raise ValueError(f"PCA initialisation needs more than k={k} points")
    if index is None:
        index = KnnIndex(cloud.points)
    idx, _ = index.query(cloud.points, k)
    nb = cloud.points[idx]
    dev = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", dev, dev) / k
    evals, evecs = np.linalg.eigh(cov)
    nrm = _canonical_sign(evecs[:, :, 0])
    flags = evals[:, 1] <= 1e-10 * np.maximum(evals[:, 2], 1e-300)
    if np.any(flags):
        log.warning("%d points with collinear neighbourhoods get random normals", int(flags.sum()))
        nrm[flags] = random_unit_vectors(int(flags.sum()), make_rng(seed))
    out = cloud.with_normals(nrm)
    return (out, flags) if return_flags else out


def init_gauss_map(cloud: PointCloud, return_flags: bool = False):
    """Normal = direction from the origin; assumes a centered cloud."""
    p = cloud.points
    r = np.linalg.norm(p, axis=1)
    flags = r <= 1e-9
    nrm = np.empty_like(p)
    nrm[~flags] = p[~flags] / r[~flags, None]
    nrm[flags] = (0.0, 0.0, 1.0)
    out = cloud.with_normals(nrm)
    return (out, flags) if return_flags else out


def initialize(cloud: PointCloud, mode: str, seed: RngSeed | int = 0,
               index: KnnIndex | None = None) -> PointCloud:
    if mode == "random":
        return init_random(cloud, seed)
    if mode == "pca":
        return init_pca(cloud, index, seed=seed)
    if mode == "gauss":
        return init_gauss_map(cloud)
    raise ValueError(f"unknown init mode {mode!r}")
