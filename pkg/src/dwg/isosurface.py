"""Marching cubes on a sparse set of active cells of a uniform grid.

Cells and corners are addressed by integer lattice coordinates at the octree's
maximum depth. Vertices are keyed by global lattice edge, so neighbouring
cells share bitwise-identical vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE
from .core import TriangleMesh
from .spatial import WindingOctree

_CORNER_OFF = np.array(CORNER_OFFSETS, dtype=np.int64)
_EDGE_CORNERS = np.array(EDGE_CORNERS, dtype=np.int64)
_TRI_COUNT = np.array([len(t) // 3 for t in TRI_TABLE], dtype=np.int64)
_TRI_EDGES = np.full((256, 15), -1, dtype=np.int64)
for _c, _t in enumerate(TRI_TABLE):
    _TRI_EDGES[_c, : len(_t)] = _t
# lower corner offset and axis of each cube edge
_EDGE_LO = np.minimum(_CORNER_OFF[_EDGE_CORNERS[:, 0]], _CORNER_OFF[_EDGE_CORNERS[:, 1]])
_EDGE_AXIS = np.argmax(np.abs(_CORNER_OFF[_EDGE_CORNERS[:, 1]] - _CORNER_OFF[_EDGE_CORNERS[:, 0]]), axis=1)

MAX_GRID_DEPTH = 20


@dataclass
class ActiveGrid:
    """Active cells of the ``2**depth`` lattice over the octree root cube.

    ``cell_corners[c, k]`` indexes into ``corners`` for corner ``k`` of cell
    ``c`` (Bourke corner order). ``corner_values`` is filled by the caller.
    """

    origin: np.ndarray
    cell_size: float
    resolution: int
    cells: np.ndarray
    corners: np.ndarray
    cell_corners: np.ndarray
    corner_values: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def corner_positions(self, idx=None) -> np.ndarray:
        c = self.corners if idx is None else self.corners[idx]
        return self.origin + c * self.cell_size

    def corner_keys(self) -> np.ndarray:
        return _keys(self.corners, self.resolution + 1)

    def cell_keys(self) -> np.ndarray:
        return _keys(self.cells, self.resolution + 1)

    @property
    def n_cells(self) -> int:
        return len(self.cells)


def _keys(ijk: np.ndarray, base: int) -> np.ndarray:
    ijk = ijk.astype(np.int64)
    return (ijk[:, 0] * base + ijk[:, 1]) * base + ijk[:, 2]


def _unkey(keys: np.ndarray, base: int) -> np.ndarray:
    k = keys % base
    j = (keys // base) % base
    i = keys // (base * base)
    return np.stack([i, j, k], axis=1)


def dilate_cells(cells: np.ndarray, r: int, res: int, base: int) -> np.ndarray:
    """Cells within Chebyshev distance ``r``; the cube is separable, so one axis at a time."""
    if r <= 0:
        return cells
    steps = np.arange(-r, r + 1)
    for ax in range(3):
        c = np.repeat(cells, len(steps), axis=0)
        c[:, ax] += np.tile(steps, len(cells))
        c = c[(c[:, ax] >= 0) & (c[:, ax] < res)]
        cells = _unkey(np.unique(_keys(c, base)), base)
    return cells


def grid_from_cells(origin, cell_size: float, resolution: int, cells: np.ndarray) -> ActiveGrid:
    base = resolution + 1
    cells = _unkey(np.unique(_keys(cells, base)), base)
    all_corners = (cells[:, None, :] + _CORNER_OFF[None, :, :]).reshape(-1, 3)
    ckeys = _keys(all_corners, base)
    ukeys, inv = np.unique(ckeys, return_inverse=True)
    return ActiveGrid(
        origin=np.asarray(origin, dtype=np.float64), cell_size=float(cell_size),
        resolution=int(resolution), cells=cells, corners=_unkey(ukeys, base),
        cell_corners=inv.reshape(-1, 8),
    )


def build_active_grid(tree: WindingOctree, dilation: int = 2) -> ActiveGrid:
    """Cells at the tree's maximum depth that hold input points, dilated."""
    d = tree.max_depth
    if d > MAX_GRID_DEPTH:
        raise ValueError(f"grid depth {d} exceeds {MAX_GRID_DEPTH}")
    res = 2**d
    cs = tree.root_size / res
    ijk = np.floor((tree.points - tree.root_lo) / cs).astype(np.int64)
    ijk = np.clip(ijk, 0, res - 1)
    base = res + 1
    cells = _unkey(np.unique(_keys(ijk, base)), base)
    cells = dilate_cells(cells, dilation, res, base)
    return grid_from_cells(tree.root_lo, cs, res, cells)


def break_ties(values: np.ndarray, iso: float) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    tie = v == iso
    if np.any(tie):
        v = v.copy()
        v[tie] = iso + 1e-12 * (1.0 + abs(iso))
    return v


def marching_cubes(grid: ActiveGrid, iso: float, values: np.ndarray | None = None) -> TriangleMesh:
    """Extract the ``iso`` level set over the active cells.

    Faces wind counter-clockwise seen from the lower-valued side, so the
    right-hand normal points toward decreasing values (outward for a field
    that is high inside).
    """
    vals = grid.corner_values if values is None else values
    if vals is None:
        raise ValueError("grid has no corner values")
    vals = break_ties(vals, iso)
    if not np.all(np.isfinite(vals)):
        raise ValueError("corner values must be finite")
    cv = vals[grid.cell_corners]                               # (m, 8)
    case = ((cv < iso) * (1 << np.arange(8))).sum(axis=1)
    ntri = _TRI_COUNT[case]
    hit = np.nonzero(ntri)[0]
    if len(hit) == 0:
        return TriangleMesh.empty()

    cell_of_tri = np.repeat(hit, ntri[hit])
    # position of each triangle within its cell's table row
    first = np.cumsum(ntri[hit]) - ntri[hit]
    slot = np.arange(len(cell_of_tri)) - np.repeat(first, ntri[hit])
    cols = slot[:, None] * 3 + np.arange(3)
    edges = _TRI_EDGES[case[cell_of_tri][:, None], cols]        # (T, 3) local edge ids

    base = grid.resolution + 1
    lo = grid.cells[cell_of_tri][:, None, :] + _EDGE_LO[edges]  # (T, 3, 3)
    ekey = _keys(lo.reshape(-1, 3), base) * 3 + _EDGE_AXIS[edges].reshape(-1)
    ukey, inv = np.unique(ekey, return_inverse=True)

    # interpolate once per unique lattice edge
    axis = ukey % 3
    c0 = _unkey(ukey // 3, base)
    c1 = c0.copy()
    c1[np.arange(len(c1)), axis] += 1
    ckeys = grid.corner_keys()
    v0 = vals[np.searchsorted(ckeys, _keys(c0, base))]
    v1 = vals[np.searchsorted(ckeys, _keys(c1, base))]
    t = (iso - v0) / (v1 - v0)
    verts = grid.origin + c0 * grid.cell_size
    verts[np.arange(len(verts)), axis] += t * grid.cell_size

    return TriangleMesh(verts, inv.reshape(-1, 3))


def face_gradients(mesh: TriangleMesh) -> TriangleMesh:
    """Attach unnormalized ``(v1 - v0) x (v2 - v0)`` to every face."""
    v = mesh.vertices
    f = mesh.faces
    if len(f) == 0:
        g = np.zeros((0, 3))
    else:
        g = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return TriangleMesh(mesh.vertices, mesh.faces, g)


def boundary_crossings(grid: ActiveGrid, iso: float, values: np.ndarray | None = None) -> np.ndarray:
    """Inactive cells adjacent to an active cell face that the level set crosses."""
    vals = break_ties(grid.corner_values if values is None else values, iso)
    below = vals[grid.cell_corners] < iso                        # (m, 8)
    base = grid.resolution + 1
    active = grid.cell_keys()
    out = []
    for axis in range(3):
        for side in (0, 1):
            face = np.nonzero(_CORNER_OFF[:, axis] == side)[0]
            mixed = below[:, face].any(axis=1) & ~below[:, face].all(axis=1)
            nb = grid.cells.copy()
            nb[:, axis] += 1 if side else -1
            ok = mixed & (nb[:, axis] >= 0) & (nb[:, axis] < grid.resolution)
            nb = nb[ok]
            k = _keys(nb, base)
            pos = np.searchsorted(active, k)
            pos = np.minimum(pos, len(active) - 1)
            out.append(nb[active[pos] != k])
    if not out:
        return np.zeros((0, 3), dtype=np.int64)
    cells = np.concatenate(out)
    return _unkey(np.unique(_keys(cells, base)), base) if len(cells) else cells
