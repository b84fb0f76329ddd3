"""Analytic test shapes with exact normals and area weights."""

from __future__ import annotations

import math

import numpy as np

from .core import PointCloud, make_rng


def sample_sphere(n: int, radius: float = 1.0, seed=0) -> PointCloud:
    if n < 4:
        raise ValueError("need at least 4 points")
    g = make_rng(seed).standard_normal((n, 3))
    nrm = g / np.linalg.norm(g, axis=1, keepdims=True)
    areas = np.full(n, 4.0 * math.pi * radius**2 / n)
    return PointCloud(radius * nrm, nrm, areas)


def sample_torus(n: int, R: float = 0.3, r: float = 0.12, seed=0) -> PointCloud:
    """Uniform samples on a torus around the z axis.

    Rejection sampling on theta (tube angle) with density ~ R + r*cos(theta)
    gives uniform surface measure, so every point carries area 4*pi^2*R*r/n.
    """
    if not R > r > 0:
        raise ValueError("torus needs R > r > 0")
    rng = make_rng(seed)
    theta = np.empty(0)
    while len(theta) < n:
        m = 2 * (n - len(theta)) + 16
        t = rng.uniform(0.0, 2 * math.pi, m)
        u = rng.uniform(0.0, R + r, m)
        theta = np.concatenate([theta, t[u <= R + r * np.cos(t)]])
    theta = theta[:n]
    phi = rng.uniform(0.0, 2 * math.pi, n)
    ring = R + r * np.cos(theta)
    pts = np.stack([ring * np.cos(phi), ring * np.sin(phi), r * np.sin(theta)], axis=1)
    nrm = np.stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), np.sin(theta)], axis=1)
    areas = np.full(n, 4.0 * math.pi**2 * R * r / n)
    return PointCloud(pts, nrm, areas)


def torus_angles(points: np.ndarray, R: float) -> tuple[np.ndarray, np.ndarray]:
    x, y, z = points.T
    phi = np.arctan2(y, x)
    theta = np.arctan2(z, np.hypot(x, y) - R)
    return theta, phi


def plate_faces(w: float, h: float, thickness: float):
    """The six faces of the box ``[-w/2, w/2] x [-h/2, h/2] x [-t/2, t/2]``.

    Each face is ``(origin, edge_u, edge_v, outward_normal)``.
    """
    hw, hh, ht = w / 2, h / 2, thickness / 2
    ex, ey, ez = np.eye(3)
    return [
        (np.array([-hw, -hh, ht]), w * ex, h * ey, ez),
        (np.array([-hw, -hh, -ht]), w * ex, h * ey, -ez),
        (np.array([-hw, -hh, -ht]), w * ex, thickness * ez, -ey),
        (np.array([-hw, hh, -ht]), w * ex, thickness * ez, ey),
        (np.array([-hw, -hh, -ht]), h * ey, thickness * ez, -ex),
        (np.array([hw, -hh, -ht]), h * ey, thickness * ez, ex),
    ]


def sample_thin_plate(n: int, w: float = 1.0, h: float = 1.0, thickness: float = 0.02,
                      seed=0, return_face_ids: bool = False):
    """Closed thin box sampled uniformly by area; face 0 is the top (+z) sheet."""
    if not thickness < min(w, h) / 10:
        raise ValueError("plate must be thin: thickness < min(w, h)/10")
    rng = make_rng(seed)
    faces = plate_faces(w, h, thickness)
    face_area = np.array([np.linalg.norm(np.cross(u, v)) for _, u, v, _ in faces])
    total = face_area.sum()
    ids = rng.choice(6, size=n, p=face_area / total)
    st = rng.uniform(0.0, 1.0, (n, 2))
    origin = np.array([f[0] for f in faces])[ids]
    eu = np.array([f[1] for f in faces])[ids]
    ev = np.array([f[2] for f in faces])[ids]
    pts = origin + st[:, :1] * eu + st[:, 1:] * ev
    nrm = np.array([f[3] for f in faces])[ids]
    cloud = PointCloud(pts, nrm, np.full(n, total / n))
    return (cloud, ids) if return_face_ids else cloud


def mean_spacing(n: int, area: float) -> float:
    return math.sqrt(area / n)
