"""Tests for surface voxelization, closing, exterior masking and the mesh-to-points pipeline."""

import itertools

import numpy as np
import pytest

from errors import InvalidParameterError
from geometry import Aabb
from shapes import nested_cubes_mesh, sphere_mesh
from voxelizer import (
    Mesh,
    VoxelGrid,
    mask_exterior,
    mesh_to_pointset,
    morph_close,
    triangle_box_overlap,
    voxel_centers,
    voxelize_surface,
)

UNIT_BOX = Aabb([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])


def brute_force_cells(mesh, grid):
    """Unpadded occupancy by testing every triangle against every cell"""
    dims = np.array(grid.dims) - 2
    occ = np.zeros(tuple(dims), dtype=bool)
    for idx in itertools.product(*(range(n) for n in dims)):
        lo = grid.origin + (np.array(idx) + 1) * grid.cell_size
        box = Aabb(lo, lo + grid.cell_size)
        occ[idx] = any(triangle_box_overlap(tri, box) for tri in mesh.triangles())
    return occ


def test_triangle_inside_box():
    assert triangle_box_overlap([[0.2, 0.2, 0.5], [0.8, 0.2, 0.5], [0.5, 0.8, 0.5]], UNIT_BOX)


def test_triangle_beyond_box():
    assert not triangle_box_overlap([[1.5, 0.0, 0.0], [2.0, 1.0, 0.0], [1.7, 0.0, 1.0]], UNIT_BOX)


def test_triangle_on_box_face_counts_as_touching():
    assert triangle_box_overlap([[1.0, 0.2, 0.2], [1.0, 0.8, 0.2], [1.0, 0.5, 0.8]], UNIT_BOX)


def test_triangle_crossing_box_without_vertices_inside():
    assert triangle_box_overlap([[-1.0, 0.5, -1.0], [2.0, 0.5, -1.0], [0.5, 0.5, 3.0]], UNIT_BOX)


def test_triangle_past_box_corner():
    # only the face normal separates these
    tri = [[3.1, 0.0, 0.0], [0.0, 3.1, 0.0], [0.0, 0.0, 3.1]]
    assert not triangle_box_overlap(tri, UNIT_BOX)
    assert triangle_box_overlap(np.array(tri) * (2.9 / 3.1), UNIT_BOX)


def test_overlap_is_symmetric_under_axis_permutation(rng):
    box = Aabb([0.0, -0.5, 0.2], [1.0, 0.5, 0.9])
    for _ in range(50):
        tri = rng.uniform(-1.0, 2.0, size=(3, 3))
        expected = triangle_box_overlap(tri, box)
        for perm in itertools.permutations(range(3)):
            permuted = Aabb(box.min[list(perm)], box.max[list(perm)])
            assert triangle_box_overlap(tri[:, perm], permuted) == expected


def test_cube_at_resolution_four_sets_boundary_cells(unit_cube):
    grid = voxelize_surface(unit_cube, 4)
    assert grid.dims == (6, 6, 6)
    assert grid.count == 56
    interior = grid.occupancy[1:-1, 1:-1, 1:-1]
    assert interior[1:3, 1:3, 1:3].sum() == 0
    np.testing.assert_allclose(grid.origin, [-0.25, -0.25, -0.25])


def test_voxelization_matches_brute_force(rng):
    vertices = rng.uniform(0.0, 1.0, size=(5, 3))
    mesh = Mesh(vertices, [[0, 1, 2], [2, 3, 4], [0, 3, 4]])
    grid = voxelize_surface(mesh, 5)
    np.testing.assert_array_equal(grid.occupancy[1:-1, 1:-1, 1:-1], brute_force_cells(mesh, grid))
    assert not grid.occupancy[0].any() and not grid.occupancy[-1].any()


def test_small_triangle_sets_at_least_one_cell():
    mesh = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.41, 0.42, 0.0], [0.43, 0.42, 0.0], [0.42, 0.44, 0.0]],
                [[0, 1, 2], [3, 4, 5]])
    small = Mesh(mesh.vertices, [[3, 4, 5]])
    grid = voxelize_surface(mesh, 8)
    expected = brute_force_cells(small, grid)
    assert expected.sum() >= 1
    assert np.all(grid.occupancy[1:-1, 1:-1, 1:-1][expected])


def test_count_grows_with_surface_area(unit_cube):
    coarse = voxelize_surface(unit_cube, 4).count
    fine = voxelize_surface(unit_cube, 8).count
    assert 3 <= fine / coarse <= 6


def test_face_order_does_not_matter(rng):
    mesh = sphere_mesh(rings=8, segments=12)
    shuffled = Mesh(mesh.vertices, mesh.faces[rng.permutation(len(mesh.faces))])
    np.testing.assert_array_equal(voxelize_surface(mesh, 10).occupancy, voxelize_surface(shuffled, 10).occupancy)


def test_resolution_below_two_is_rejected(unit_cube):
    with pytest.raises(InvalidParameterError):
        voxelize_surface(unit_cube, 1)


def _grid(occupancy):
    return VoxelGrid(np.zeros(3), 1.0, occupancy)


def test_closing_empty_and_solid_grids():
    empty = _grid(np.zeros((4, 4, 4), dtype=bool))
    assert morph_close(empty).count == 0
    solid = _grid(np.ones((5, 5, 5), dtype=bool))
    np.testing.assert_array_equal(morph_close(solid).occupancy, solid.occupancy)


def test_closing_fills_a_hole_in_a_plate():
    occ = np.zeros((5, 5, 3), dtype=bool)
    occ[:, :, 1] = True
    occ[2, 2, 1] = False
    closed = morph_close(_grid(occ)).occupancy
    assert closed[2, 2, 1]
    assert closed[:, :, 1].all()
    assert not closed[:, :, 0].any() and not closed[:, :, 2].any()


@pytest.mark.parametrize("seed", range(100))
def test_closing_is_idempotent(seed):
    g = np.random.default_rng(seed)
    shape = tuple(g.integers(3, 10, size=3))
    grid = _grid(g.random(shape) < g.uniform(0.05, 0.5))
    radius = 1 + seed % 2
    once = morph_close(grid, radius)
    np.testing.assert_array_equal(morph_close(once, radius).occupancy, once.occupancy)
    assert np.all(once.occupancy[grid.occupancy])


def test_closing_radius_zero_is_a_copy(rng):
    g = _grid(rng.random((4, 4, 4)) < 0.5)
    np.testing.assert_array_equal(morph_close(g, 0).occupancy, g.occupancy)


def test_mask_exterior_drops_enclosed_cube():
    occ = np.zeros((8, 8, 8), dtype=bool)
    occ[[0, -1], :, :] = occ[:, [0, -1], :] = occ[:, :, [0, -1]] = True
    shell = occ.copy()
    occ[3:5, 3:5, 3:5] = True
    np.testing.assert_array_equal(mask_exterior(_grid(occ)).occupancy, shell)


def test_mask_exterior_keeps_the_skin_of_a_solid_block():
    occ = np.zeros((8, 8, 8), dtype=bool)
    occ[2:6, 2:6, 2:6] = True
    masked = mask_exterior(_grid(occ))
    assert masked.count == 4 ** 3 - 2 ** 3
    assert not masked.occupancy[3:5, 3:5, 3:5].any()


def test_mask_exterior_is_a_subset(rng):
    g = _grid(rng.random((7, 7, 7)) < 0.4)
    masked = mask_exterior(g).occupancy
    assert not (masked & ~g.occupancy).any()
    assert mask_exterior(_grid(np.zeros((3, 3, 3), dtype=bool))).count == 0


def test_voxel_centers():
    occ = np.zeros((2, 2, 2), dtype=bool)
    occ[0, 0, 0] = True
    np.testing.assert_allclose(voxel_centers(_grid(occ)), [[0.5, 0.5, 0.5]])
    assert voxel_centers(_grid(np.zeros((2, 2, 2), dtype=bool))).shape == (0, 3)


def test_cube_pipeline_gives_56_points(unit_cube):
    points = mesh_to_pointset(unit_cube, 4)
    assert points.shape == (56, 3)
    assert points.min() == pytest.approx(0.125) and points.max() == pytest.approx(0.875)


def test_enclosed_component_contributes_no_points():
    points = mesh_to_pointset(nested_cubes_mesh(), 16)
    inner = np.all((points > 0.3) & (points < 0.7), axis=1)
    assert not inner.any()
    assert len(points) == 16 ** 3 - 14 ** 3


def test_sphere_points_lie_in_a_band_around_the_surface():
    grid = voxelize_surface(sphere_mesh(), 16)
    radii = np.linalg.norm(voxel_centers(grid), axis=1)
    band = 0.5 * np.sqrt(3.0) * grid.cell_size + 0.01
    assert np.all(np.abs(radii - 1.0) <= band)
    points = mesh_to_pointset(sphere_mesh(), 16)
    assert 0 < len(points) <= grid.count
