"""The winding-gradient diffusion loop.

Each iteration samples the screened winding number, extracts the level set at
the mean leaf value, and replaces every point normal by the normalized sum of
the face gradients whose k nearest points include it.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .core import EmptyLevelSetError, PointCloud, RngSeed, TriangleMesh, normalize_cloud
from .initialize import initialize
from .isosurface import (ActiveGrid, boundary_crossings, build_active_grid, face_gradients,
                         grid_from_cells, marching_cubes)
from .spatial import (DEFAULT_MAX_LEAF_POINTS, KnnIndex, WindingOctree, build_octree,
                      compute_area_weights, refresh_aggregates)
from .winding import BETA, DELTA_K, V_MAX, V_MIN, FastEvaluator, KernelConfig, compute_deltas

log = logging.getLogger(__name__)

MAX_GROW_ROUNDS = 32


@dataclass
class DwgConfig:
    depth: int = 8
    lam: float = 10.0
    knn_update_k: int = 10
    epsilon_deg: float = 0.1
    top_fraction: float = 0.01
    max_iterations: int = 200
    init_mode: str = "random"
    seed: int = 0
    area_mode: str = "uniform"
    dilation: int = 8
    grow_rounds: int = 0
    max_leaf_points: int = DEFAULT_MAX_LEAF_POINTS
    area_m: int = 15
    delta_k: int = DELTA_K
    v_min: float = V_MIN
    v_max: float = V_MAX
    beta: float = BETA
    threads: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.top_fraction <= 1:
            raise ValueError("top_fraction must be in (0, 1]")
        if not self.epsilon_deg > 0:
            raise ValueError("epsilon_deg must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.knn_update_k < 1:
            raise ValueError("knn_update_k must be >= 1")
        if self.init_mode not in ("random", "pca", "gauss"):
            raise ValueError(f"unknown init mode {self.init_mode!r}")
        if self.area_mode not in ("uniform", "voronoi"):
            raise ValueError(f"unknown area mode {self.area_mode!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")

    def kernel(self, delta=None) -> KernelConfig:
        return KernelConfig(self.lam, delta, self.delta_k, self.v_min, self.v_max, self.beta)


@dataclass
class IterationRecord:
    iteration: int
    iso_value: float
    metric: float
    faces: int
    unreached: int
    boundary_crossings: int
    seconds: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class DiffusionState:
    iteration: int
    cloud: PointCloud
    tree: WindingOctree
    last_mesh: Optional[TriangleMesh] = None
    iso_value: float = float("nan")
    convergence_metric: float = float("inf")
    history: list = field(default_factory=list)
    reached: Optional[np.ndarray] = None


@dataclass
class Prepared:
    """Everything that stays fixed across iterations, in the normalized frame."""

    cloud: PointCloud
    transform: object
    knn: KnnIndex
    tree: WindingOctree
    grid: ActiveGrid
    kernel: KernelConfig
    leaf_centers: np.ndarray
    area_flags: np.ndarray


@dataclass
class DwgResult:
    cloud: PointCloud               # final normals, original coordinates
    mesh: TriangleMesh              # original coordinates
    history: list
    converged: bool
    iterations: int
    flipped: bool
    normalized_cloud: PointCloud
    normalized_mesh: TriangleMesh
    cell_size: float                # normalized frame
    prepared: Prepared


def prepare(cloud: PointCloud, cfg: DwgConfig, normalized: bool = False) -> Prepared:
    if normalized:
        from .core import Transform
        nc, tf = cloud, Transform(np.zeros(3), 1.0)
    else:
        nc, tf = normalize_cloud(cloud)
    index = KnnIndex(nc.points)
    areas, flags = compute_area_weights(nc, index, cfg.area_m, cfg.area_mode, return_flags=True)
    nc = nc.with_areas(areas)
    kcfg = cfg.kernel()
    kcfg.delta = compute_deltas(nc, index, kcfg)
    nc = initialize(nc, cfg.init_mode, RngSeed(cfg.seed), index)
    tree = build_octree(nc, cfg.depth, cfg.max_leaf_points)
    grid = build_active_grid(tree, cfg.dilation)
    return Prepared(nc, tf, index, tree, grid, kcfg, tree.leaf_centers(), flags)


def angle_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    c = np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)
    return np.degrees(np.arccos(c))


def top_fraction_mean(values: np.ndarray, fraction: float) -> float:
    k = max(1, int(math.ceil(fraction * len(values))))
    return float(np.mean(np.partition(values, len(values) - k)[-k:]))


def scatter_face_gradients(mesh: TriangleMesh, index: KnnIndex, n_points: int, k: int,
                           threads: int | None = None) -> np.ndarray:
    """Sum each face gradient into the k points nearest the face centroid."""
    g = mesh.face_gradients
    acc = np.zeros((n_points, 3))
    if g is None or len(g) == 0:
        return acc
    keep = np.any(g != 0.0, axis=1)
    g = g[keep]
    if len(g) == 0:
        return acc
    cent = mesh.vertices[mesh.faces[keep]].mean(axis=1)
    idx, _ = index.query(cent, k, workers=threads or 1)
    np.add.at(acc, idx.reshape(-1), np.repeat(g, idx.shape[1], axis=0))
    return acc


def sample_grid(ev: FastEvaluator, grid: ActiveGrid, threads=None) -> ActiveGrid:
    return replace(grid, corner_values=ev(grid.corner_positions(), threads))


def grow_to_closure(ev: FastEvaluator, grid: ActiveGrid, iso: float, threads=None,
                    max_rounds: int = MAX_GROW_ROUNDS) -> ActiveGrid:
    """Add cells wherever the level set leaves the active region, until it doesn't."""
    added = 0
    for _ in range(max_rounds):
        extra = boundary_crossings(grid, iso)
        if len(extra) == 0:
            break
        added += len(extra)
        old_keys = grid.corner_keys()
        old_vals = grid.corner_values
        g2 = grid_from_cells(grid.origin, grid.cell_size, grid.resolution,
                             np.concatenate([grid.cells, extra]))
        keys = g2.corner_keys()
        pos = np.minimum(np.searchsorted(old_keys, keys), len(old_keys) - 1)
        have = old_keys[pos] == keys
        vals = np.empty(len(keys))
        vals[have] = old_vals[pos[have]]
        if np.any(~have):
            vals[~have] = ev(g2.corner_positions(np.nonzero(~have)[0]), threads)
        grid = replace(g2, corner_values=vals)
    diag = {**grid.diagnostics, "grown_cells": added,
            "open_crossings": int(len(boundary_crossings(grid, iso)))}
    return replace(grid, diagnostics=diag)


def extract_level_set(ev: FastEvaluator, prep: Prepared, threads=None, close: bool = False):
    """Field at leaf centers and grid corners, then the mean-leaf-value level set."""
    leaf_vals = ev(prep.leaf_centers, threads)
    iso = float(np.mean(leaf_vals))
    grid = sample_grid(ev, prep.grid, threads)
    if close:
        grid = grow_to_closure(ev, grid, iso, threads)
    mesh = face_gradients(marching_cubes(grid, iso))
    return mesh, iso, grid


def dwg_step(state: DiffusionState, prep: Prepared, cfg: DwgConfig) -> DiffusionState:
    t0 = time.perf_counter()
    cloud = state.cloud
    ev = FastEvaluator(state.tree, cloud, prep.kernel)
    leaf_vals = ev(prep.leaf_centers, cfg.threads)
    iso = float(np.mean(leaf_vals))
    grid = sample_grid(ev, prep.grid, cfg.threads)
    if cfg.grow_rounds > 0:
        grid = grow_to_closure(ev, grid, iso, cfg.threads, cfg.grow_rounds)
    t1 = time.perf_counter()
    mesh = face_gradients(marching_cubes(grid, iso))
    t2 = time.perf_counter()
    if mesh.n_faces == 0:
        raise EmptyLevelSetError(
            f"empty level set at iteration {state.iteration + 1}",
            {"iteration": state.iteration + 1, "iso_value": iso,
             "field_min": float(grid.corner_values.min()),
             "field_max": float(grid.corner_values.max())})

    acc = scatter_face_gradients(mesh, prep.knn, len(cloud), cfg.knn_update_k, cfg.threads)
    norm = np.linalg.norm(acc, axis=1)
    reached = norm > 0
    new = cloud.normals.copy()
    new[reached] = acc[reached] / norm[reached, None]
    change = angle_deg(cloud.normals, new)
    metric = top_fraction_mean(change, cfg.top_fraction)
    t3 = time.perf_counter()

    new_cloud = cloud.with_normals(new)
    tree = refresh_aggregates(state.tree, new_cloud)
    t4 = time.perf_counter()

    rec = IterationRecord(
        iteration=state.iteration + 1, iso_value=iso, metric=metric, faces=mesh.n_faces,
        unreached=int((~reached).sum()),
        boundary_crossings=int(len(boundary_crossings(grid, iso))),
        seconds={"field": t1 - t0, "marching_cubes": t2 - t1, "scatter": t3 - t2,
                 "refresh": t4 - t3},
    )
    return DiffusionState(state.iteration + 1, new_cloud, tree, mesh, iso, metric,
                          state.history + [rec], reached)


def finalize_orientation(cloud: PointCloud, tree: WindingOctree, kcfg: KernelConfig,
                         threads=None) -> tuple[PointCloud, bool]:
    """Flip all normals if the far exterior reads closer to the iso value than zero does."""
    ev = FastEvaluator(tree, cloud, kcfg)
    iso = float(np.mean(ev(tree.leaf_centers(), threads)))
    center = tree.root_lo + tree.root_size / 2.0
    signs = np.array([[(i >> 0) & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)]) * 2 - 1
    probes = center + 3.0 * (tree.root_size / 2.0) * signs
    outside = float(np.mean(ev(probes, threads)))
    if outside > 0.5 * iso:
        return cloud.with_normals(-cloud.normals), True
    return cloud, False


def run_dwg(cloud: PointCloud, cfg: DwgConfig,
            on_iteration: Callable[[IterationRecord], None] | None = None,
            normalized: bool = False) -> DwgResult:
    """Orient ``cloud`` and reconstruct a mesh; see :class:`DwgConfig`."""
    prep = prepare(cloud, cfg, normalized)
    state = DiffusionState(0, prep.cloud, prep.tree)
    best = state
    converged = False
    while state.iteration < cfg.max_iterations:
        state = dwg_step(state, prep, cfg)
        rec = state.history[-1]
        log.info("iter %d  iso %.5g  metric %.4f deg  faces %d  unreached %d",
                 rec.iteration, rec.iso_value, rec.metric, rec.faces, rec.unreached)
        if on_iteration is not None:
            on_iteration(rec)
        if state.convergence_metric <= best.convergence_metric:
            best = state
        if state.convergence_metric <= cfg.epsilon_deg:
            converged = True
            break
    final = state if converged else best
    if not converged:
        log.warning("no convergence after %d iterations (best metric %.4f deg)",
                    cfg.max_iterations, best.convergence_metric)

    oriented, flipped = finalize_orientation(final.cloud, final.tree, prep.kernel, cfg.threads)
    tree = refresh_aggregates(final.tree, oriented) if flipped else final.tree
    ev = FastEvaluator(tree, oriented, prep.kernel)
    mesh, _, _ = extract_level_set(ev, prep, cfg.threads, close=True)

    tf = prep.transform
    out_mesh = TriangleMesh(tf.inverse(mesh.vertices), mesh.faces)
    out_cloud = PointCloud(cloud.points, oriented.normals, cloud.areas, cloud.bbox_diagonal)
    return DwgResult(out_cloud, out_mesh, state.history, converged, state.iteration, flipped,
                     oriented, mesh, prep.grid.cell_size, prep)


def write_diagnostics(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
