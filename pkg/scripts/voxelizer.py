"""
Fuzzy Shape Registration - Mesh Voxelizer
Turns sparse-vertex meshes into dense surface point sets: surface voxelization,
gap closing, exterior-shell masking and voxel-center extraction
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from errors import DegenerateInputError, InvalidParameterError
from geometry import Aabb

logger = logging.getLogger(__name__)

FACE_CONNECTIVITY = ndimage.generate_binary_structure(3, 1)
FULL_CONNECTIVITY = ndimage.generate_binary_structure(3, 3)
DEFAULT_RESOLUTION = 64


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        F = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(V)):
            raise InvalidParameterError("mesh vertices must be finite")
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise InvalidParameterError(f"face index out of range for {len(V)} vertices")
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "faces", F)

    def triangles(self) -> np.ndarray:
        """(m, 3, 3) corner coordinates per face"""
        return self.vertices[self.faces]

    def bounds(self) -> Aabb:
        if len(self.faces) == 0:
            raise DegenerateInputError("mesh has no faces")
        return Aabb.from_points(self.vertices[np.unique(self.faces)])


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Cell (i, j, k) spans [origin + (i, j, k) * cell_size, origin + (i+1, j+1, k+1) * cell_size)"""

    origin: np.ndarray
    cell_size: float
    occupancy: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 3 or min(occ.shape) < 1:
            raise InvalidParameterError(f"occupancy must be a non-empty 3D array, got shape {occ.shape}")
        if not self.cell_size > 0.0:
            raise InvalidParameterError(f"cell size must be > 0, got {self.cell_size}")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "occupancy", occ)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.occupancy.shape)

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())

    def with_occupancy(self, occupancy) -> "VoxelGrid":
        return VoxelGrid(self.origin, self.cell_size, occupancy)


# Separating-axis test, vectorized over boxes. Coordinates are relative to
# each box center so every axis test compares projections against the box
# half-width radius; touching counts as overlap.

def _overlaps(tri: np.ndarray, centers: np.ndarray, half: np.ndarray) -> np.ndarray:
    tri = np.asarray(tri, dtype=float)
    v = tri[None, :, :] - centers[:, None, :]
    edges = (tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2])
    axes = [np.eye(3)[a] for a in range(3)]
    axes.append(np.cross(edges[0], edges[1]))
    axes.extend(np.cross(e, np.eye(3)[a]) for e in edges for a in range(3))

    hit = np.ones(len(centers), dtype=bool)
    for axis in axes:
        p = v @ axis
        r = float(np.abs(axis) @ half)
        tol = 1e-10 * r
        hit &= ~((p.min(axis=1) > r + tol) | (p.max(axis=1) < -r - tol))
    return hit


def triangle_box_overlap(tri, box: Aabb) -> bool:
    """True iff the closed triangle meets the closed box (13-axis SAT)"""
    tri = np.asarray(tri, dtype=float).reshape(3, 3)
    return bool(_overlaps(tri, box.center[None, :], 0.5 * box.extent)[0])


def _grid_dims(extent: np.ndarray, cell: float, resolution: int) -> np.ndarray:
    dims = np.array([max(1, math.ceil(e / cell - 1e-9)) for e in extent])
    dims[int(np.argmax(extent))] = resolution
    return dims


def voxelize_surface(mesh: Mesh, resolution: int = DEFAULT_RESOLUTION) -> VoxelGrid:
    """
    Mark every cell some face touches

    Cells are cubes of (largest bbox edge) / resolution. Faces are rasterized on
    the grid that exactly covers the bounding box, then one empty layer is added
    on every side so the exterior is connected for flood filling.
    """
    if resolution < 2:
        raise InvalidParameterError(f"resolution must be >= 2, got {resolution}")
    box = mesh.bounds()
    edge = box.largest_edge
    if edge <= 0.0:
        raise DegenerateInputError("mesh has zero extent on every axis")
    cell = edge / resolution
    dims = _grid_dims(box.extent, cell, resolution)
    occ = np.zeros(tuple(dims), dtype=bool)
    half = np.full(3, 0.5 * cell)

    for tri in mesh.triangles():
        lo = np.floor((tri.min(axis=0) - box.min) / cell).astype(int) - 1
        hi = np.floor((tri.max(axis=0) - box.min) / cell).astype(int) + 1
        lo = np.clip(lo, 0, dims - 1)
        hi = np.clip(hi, 0, dims - 1)
        idx = np.stack(np.meshgrid(*(np.arange(a, b + 1) for a, b in zip(lo, hi)), indexing="ij"), axis=-1)
        idx = idx.reshape(-1, 3)
        centers = box.min + (idx + 0.5) * cell
        hit = _overlaps(tri, centers, half)
        occ[tuple(idx[hit].T)] = True

    logger.debug("voxelized %d faces into %d of %d cells", len(mesh.faces), int(occ.sum()), occ.size)
    return VoxelGrid(box.min - cell, cell, np.pad(occ, 1))


def morph_close(grid: VoxelGrid, radius: int = 1) -> VoxelGrid:
    """Dilate then erode with the 26-neighbourhood, treating the outside as empty"""
    if radius < 0:
        raise InvalidParameterError(f"closing radius must be >= 0, got {radius}")
    if radius == 0:
        return grid.with_occupancy(grid.occupancy.copy())
    padded = np.pad(grid.occupancy, radius)
    closed = ndimage.binary_dilation(padded, FULL_CONNECTIVITY, iterations=radius)
    closed = ndimage.binary_erosion(closed, FULL_CONNECTIVITY, iterations=radius)
    crop = tuple(slice(radius, -radius) for _ in range(3))
    return grid.with_occupancy(closed[crop])


def mask_exterior(grid: VoxelGrid) -> VoxelGrid:
    """
    Keep only the outer surface shell

    Empty cells reachable from the volume boundary (6-connected) form the
    exterior; an occupied cell survives iff it is 6-adjacent to the exterior.
    Space beyond the volume counts as exterior.
    """
    occ = grid.occupancy
    labels, _ = ndimage.label(~occ, structure=FACE_CONNECTIVITY)
    border = np.concatenate([
        labels[0].ravel(), labels[-1].ravel(),
        labels[:, 0].ravel(), labels[:, -1].ravel(),
        labels[:, :, 0].ravel(), labels[:, :, -1].ravel(),
    ])
    outside = np.unique(border[border > 0])
    exterior = np.isin(labels, outside)
    touching = ndimage.binary_dilation(exterior, FACE_CONNECTIVITY, border_value=1)
    return grid.with_occupancy(occ & touching)


def voxel_centers(grid: VoxelGrid) -> np.ndarray:
    """One point per set cell, lexicographic (i, j, k) order"""
    idx = np.argwhere(grid.occupancy)
    return grid.origin + (idx + 0.5) * grid.cell_size


def mesh_to_pointset(mesh: Mesh, resolution: int = DEFAULT_RESOLUTION, closing_radius: int = 1) -> np.ndarray:
    grid = voxelize_surface(mesh, resolution)
    surface = grid.count
    grid = mask_exterior(morph_close(grid, closing_radius))
    logger.info("mesh to points at resolution %d: %d surface cells, %d shell cells", resolution, surface, grid.count)
    return voxel_centers(grid)
