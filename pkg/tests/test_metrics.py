import numpy as np
import pytest

from dwg import PointCloud, TriangleMesh
from dwg.metrics import (chamfer, chamfer_to_shape, corrupt, euler_characteristic, genus, is_closed,
                         mesh_area, n_components, sample_mesh, signed_volume)


def cube_mesh():
    v = np.array([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], dtype=float)
    f = [[0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6], [0, 1, 4], [1, 5, 4],
         [2, 6, 3], [3, 6, 7], [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5]]
    return TriangleMesh(v, f)


def test_cube_topology():
    m = cube_mesh()
    assert is_closed(m)
    assert euler_characteristic(m) == 2
    assert genus(m) == 0
    assert n_components(m) == 1
    assert signed_volume(m) == pytest.approx(1.0)
    assert mesh_area(m) == pytest.approx(6.0)


def test_open_mesh_not_closed():
    m = cube_mesh()
    assert not is_closed(TriangleMesh(m.vertices, m.faces[:-1]))


def test_chamfer_of_identical_sets_is_zero():
    p = np.random.default_rng(0).random((100, 3))
    assert chamfer(p, p) == 0.0


def test_chamfer_of_shifted_sets():
    p = np.random.default_rng(0).random((200, 3)) * [1, 1, 0]
    assert chamfer(p, p + [0, 0, 0.01]) == pytest.approx(0.01)


def test_samples_on_mesh_surface():
    s = sample_mesh(cube_mesh(), 5000, seed=1)
    on_face = np.any(np.isclose(s, 0) | np.isclose(s, 1), axis=1)
    assert on_face.all()


def test_chamfer_to_unit_sphere_of_fine_mesh():
    from dwg.isosurface import grid_from_cells, marching_cubes  # noqa: PLC0415
    res = 64
    r = np.arange(res)
    cells = np.stack(np.meshgrid(r, r, r, indexing="ij"), -1).reshape(-1, 3)
    g = grid_from_cells(np.full(3, -1.2), 2.4 / res, res, cells)
    m = marching_cubes(g, 0.0, 1.0 - np.linalg.norm(g.corner_positions(), axis=1))
    cd = chamfer_to_shape(m, "sphere", 50_000, seed=0, radius=1.0)
    # dominated by the sample spacing of both sets
    assert cd < 0.01


def test_corrupt_identity():
    c = PointCloud.from_points(np.random.default_rng(0).random((50, 3)))
    out = corrupt(c, 0.0, 0.0, seed=3)
    assert np.array_equal(out.points, c.points)


def test_corrupt_noise_level():
    c = PointCloud.from_points(np.random.default_rng(0).random((20_000, 3)))
    out = corrupt(c, 1.0, 0.0, seed=3)
    sigma = (out.points - c.points).std()
    assert sigma == pytest.approx(0.01 * c.bbox_diagonal, rel=0.03)


def test_corrupt_outliers_in_enlarged_box():
    c = PointCloud.from_points(np.random.default_rng(0).random((1000, 3)))
    out, mask = corrupt(c, 0.0, 10.0, seed=3, return_mask=True)
    assert mask.sum() == 100 and len(out) == 1100
    o = out.points[mask]
    assert np.all(o >= -0.05 - 1e-9) and np.all(o <= 1.05 + 1e-9)
    assert np.array_equal(out.points[~mask], c.points)


def test_corrupt_is_seeded():
    c = PointCloud.from_points(np.random.default_rng(0).random((100, 3)))
    assert np.array_equal(corrupt(c, 1, 5, seed=2).points, corrupt(c, 1, 5, seed=2).points)


def test_closest_point_regions():
    from dwg.metrics import point_mesh_distance  # noqa: PLC0415
    tri = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    q = np.array([[0.2, 0.2, 0.5], [-1, -1, 0], [2, 0, 0], [0, 2, 1], [0.5, -1, 0],
                  [-1, 0.5, 0], [1, 1, 0]])
    want = [0.5, np.sqrt(2), 1.0, np.sqrt(2), 1.0, 1.0, np.sqrt(0.5)]
    assert np.allclose(point_mesh_distance(q, tri), want)


def test_point_mesh_distance_matches_dense_sampling():
    from dwg.metrics import point_mesh_distance  # noqa: PLC0415
    from scipy.spatial import cKDTree  # noqa: PLC0415
    m = cube_mesh()
    q = np.random.default_rng(4).uniform(-0.5, 1.5, (200, 3))
    exact = point_mesh_distance(q, m)
    approx, _ = cKDTree(sample_mesh(m, 400_000, seed=2)).query(q)
    assert np.all(exact <= approx + 1e-12)
    assert np.max(approx - exact) < 0.01
