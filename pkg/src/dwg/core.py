"""Shared geometric containers, error types and seeded randomness.

Point data is stored as ``(n, 3)`` float64 arrays rather than per-point
objects; the dataclasses below validate shapes and invariants once at
construction and then freeze their arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

UNIT_TOL = 1e-6


class DwgError(Exception):
    """Base class for all library errors."""


class DegenerateBoundsError(DwgError):
    pass


class EmptyInputError(DwgError):
    pass


class IndexMismatchError(DwgError):
    pass


class EmptyLevelSetError(DwgError):
    """Raised when marching cubes yields no faces during diffusion."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ParseError(DwgError):
    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def as_points(points) -> np.ndarray:
    """Coerce to a finite ``(n, 3)`` float64 array."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1 and p.size == 3:
        p = p.reshape(1, 3)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"expected (n, 3) coordinates, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("coordinates must be finite")
    return p


def unit_vectors(v) -> np.ndarray:
    """Normalize rows of ``v``; zero or non-finite rows are rejected."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        v = v.reshape(1, -1)
    norms = np.linalg.norm(v, axis=1)
    if not np.all(np.isfinite(norms)) or np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / norms[:, None]


def unit_vector(x: float, y: float, z: float) -> np.ndarray:
    return unit_vectors([x, y, z])[0]


@dataclass(frozen=True)
class PointCloud:
    """Points with per-point unit normals and area weights.

    ``bbox_diagonal`` is the diagonal of the cloud before normalization and
    is what noise levels are expressed against.
    """

    points: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    bbox_diagonal: float = float("nan")

    def __post_init__(self):
        p = as_points(self.points)
        n = len(p)
        if n < 1:
            raise EmptyInputError("point cloud has no points")
        nrm = np.asarray(self.normals, dtype=np.float64)
        a = np.asarray(self.areas, dtype=np.float64).reshape(-1)
        if nrm.shape != (n, 3) or a.shape != (n,):
            raise IndexMismatchError(
                f"points ({n}), normals {nrm.shape} and areas {a.shape} disagree"
            )
        nrm = unit_vectors(nrm)
        if np.any(a < 0) or not np.any(a > 0) or not np.all(np.isfinite(a)):
            raise ValueError("areas must be finite, non-negative and not all zero")
        diag = self.bbox_diagonal
        if not math.isfinite(diag):
            diag = bbox_diagonal(p)
        object.__setattr__(self, "points", _frozen(p))
        object.__setattr__(self, "normals", _frozen(nrm))
        object.__setattr__(self, "areas", _frozen(a))
        object.__setattr__(self, "bbox_diagonal", float(diag))

    @classmethod
    def from_points(cls, points, normals=None, areas=None, bbox_diagonal=float("nan")):
        p = as_points(points)
        if len(p) == 0:
            raise EmptyInputError("point cloud has no points")
        if normals is None:
            normals = np.tile([0.0, 0.0, 1.0], (len(p), 1))
        if areas is None:
            areas = np.ones(len(p))
        return cls(p, normals, areas, bbox_diagonal)

    def __len__(self) -> int:
        return len(self.points)

    def with_normals(self, normals) -> "PointCloud":
        return replace(self, normals=normals)

    def with_areas(self, areas) -> "PointCloud":
        return replace(self, areas=areas)


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    face_gradients: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise IndexError("face index out of range")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("degenerate face (repeated vertex index)")
        g = self.face_gradients
        if g is not None:
            g = np.asarray(g, dtype=np.float64).reshape(-1, 3)
            if len(g) != len(f):
                raise IndexMismatchError("one gradient per face required")
            g = _frozen(g)
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))
        object.__setattr__(self, "face_gradients", g)

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def n_faces(self) -> int:
        return len(self.faces)


@dataclass(frozen=True)
class Transform:
    """``normalized = (original - center) * scale``."""

    center: np.ndarray
    scale: float

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) * self.scale

    def inverse(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.center


def bbox_diagonal(points: np.ndarray) -> float:
    lo, hi = points.min(axis=0), points.max(axis=0)
    return float(np.linalg.norm(hi - lo))


def normalize_cloud(cloud: PointCloud) -> tuple[PointCloud, Transform]:
    """Center the bounding box at the origin and scale it to unit diagonal.

    Area weights are rescaled by ``scale**2`` so they remain surface areas in
    the new frame.
    """
    p = cloud.points
    lo, hi = p.min(axis=0), p.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if diag == 0.0:
        raise DegenerateBoundsError("all points coincide; bounding box has zero diagonal")
    tf = Transform(center=_frozen((lo + hi) / 2.0), scale=1.0 / diag)
    out = PointCloud(tf.apply(p), cloud.normals, cloud.areas * tf.scale**2, diag)
    return out, tf


@dataclass(frozen=True)
class RngSeed:
    seed: int = 0

    def __post_init__(self):
        s = int(self.seed)
        if not 0 <= s < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "seed", s)

    def generator(self, stream: int = 0) -> np.random.Generator:
        # Philox is counter-based: distinct streams are independent and reproducible
        return np.random.Generator(np.random.Philox(key=self.seed, counter=[0, 0, 0, stream]))


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, RngSeed):
        return seed.generator()
    return RngSeed(int(seed)).generator()
