"""
Fuzzy Shape Registration - Synthetic Shapes
Procedural point sets and meshes used by the benchmark scenarios and tests
"""

import numpy as np

from geometry import Aabb, SimilarityTransform, as_points, quat_from_axis_angle
from voxelizer import Mesh

CUBE_FACES = np.array([
    [0, 2, 1], [0, 3, 2],
    [4, 5, 6], [4, 6, 7],
    [0, 1, 5], [0, 5, 4],
    [2, 3, 7], [2, 7, 6],
    [1, 2, 6], [1, 6, 5],
    [0, 4, 7], [0, 7, 3],
])


def _sphere_surface(rng: np.random.Generator, n: int, center, radii) -> np.ndarray:
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    return np.asarray(center) + u * np.asarray(radii)


def _cylinder_surface(rng: np.random.Generator, n: int, start, end, radius: float) -> np.ndarray:
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    axis = end - start
    length = np.linalg.norm(axis)
    axis /= length
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    along = rng.uniform(0.0, length, n)
    angle = rng.uniform(0.0, 2.0 * np.pi, n)
    ring = np.cos(angle)[:, None] * e1 + np.sin(angle)[:, None] * e2
    return start + along[:, None] * axis + radius * ring


def asymmetric_shape(n: int = 2000, seed: int = 0) -> np.ndarray:
    """
    Surface samples of a lumpy body with a head and a bent tail

    No rotation maps the shape onto itself, so every pose is identifiable.
    """
    rng = np.random.default_rng(seed)
    parts = [
        (0.45, lambda m: _sphere_surface(rng, m, (0.0, 0.0, 0.0), (1.0, 0.6, 0.45))),
        (0.2, lambda m: _sphere_surface(rng, m, (0.9, 0.45, 0.35), (0.35, 0.3, 0.3))),
        (0.15, lambda m: _cylinder_surface(rng, m, (-0.9, 0.0, 0.1), (-1.6, -0.5, 0.6), 0.12)),
        (0.1, lambda m: _cylinder_surface(rng, m, (0.2, -0.5, -0.3), (0.4, -0.9, -0.9), 0.1)),
        (0.1, lambda m: _sphere_surface(rng, m, (-0.2, 0.2, 0.5), (0.25, 0.2, 0.15))),
    ]
    counts = [int(round(weight * n)) for weight, _ in parts]
    counts[0] += n - sum(counts)
    return np.vstack([make(m) for (_, make), m in zip(parts, counts)])


def corrupt(points, rng: np.random.Generator, subset_fraction: float = 1.0, noise_fraction: float = 0.0,
            outlier_fraction: float = 0.0) -> np.ndarray:
    """
    Random subset plus isotropic Gaussian noise and uniform outliers

    Noise sigma is noise_fraction of the bounding-box diagonal; outliers are
    outlier_fraction of the kept count, drawn in the bounding box grown 1.5x
    about its center.
    """
    P = as_points(points)
    box = Aabb.from_points(P)
    keep = max(3, int(round(subset_fraction * len(P))))
    chosen = P[np.sort(rng.permutation(len(P))[:keep])]
    if noise_fraction > 0.0:
        chosen = chosen + rng.normal(scale=noise_fraction * box.diagonal, size=chosen.shape)
    n_out = int(round(outlier_fraction * keep))
    if n_out:
        half = 0.75 * box.extent
        outliers = rng.uniform(box.center - half, box.center + half, size=(n_out, 3))
        chosen = np.vstack([chosen, outliers])
    return chosen


def random_rotation(rng: np.random.Generator, angle_degrees: float) -> SimilarityTransform:
    """Rotation by a fixed angle about a uniformly random axis"""
    axis = rng.normal(size=3)
    return SimilarityTransform(q=quat_from_axis_angle(axis, np.radians(angle_degrees)))


def cube_mesh(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0), outward: bool = True) -> Mesh:
    """Axis-aligned box as 12 triangles"""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    vertices = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ])
    faces = CUBE_FACES if outward else CUBE_FACES[:, ::-1]
    return Mesh(vertices, faces)


def nested_cubes_mesh() -> Mesh:
    """Unit box enclosing a small free-floating box, like a seat inside a car body"""
    outer = cube_mesh()
    inner = cube_mesh((0.4, 0.4, 0.4), (0.6, 0.6, 0.6), outward=False)
    return Mesh(np.vstack([outer.vertices, inner.vertices]), np.vstack([outer.faces, inner.faces + 8]))


def sphere_mesh(radius: float = 1.0, rings: int = 24, segments: int = 48) -> Mesh:
    """UV sphere with poles on the z axis"""
    theta = np.linspace(0.0, np.pi, rings + 1)[1:-1]
    phi = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    t, p = np.meshgrid(theta, phi, indexing="ij")
    body = np.column_stack([np.sin(t).ravel() * np.cos(p).ravel(),
                            np.sin(t).ravel() * np.sin(p).ravel(),
                            np.cos(t).ravel()])
    vertices = radius * np.vstack([[0.0, 0.0, 1.0], body, [0.0, 0.0, -1.0]])
    south = len(vertices) - 1

    def ring(r, s):
        return 1 + r * segments + (s % segments)

    faces = []
    for s in range(segments):
        faces.append([0, ring(0, s), ring(0, s + 1)])
        faces.append([south, ring(rings - 2, s + 1), ring(rings - 2, s)])
    for r in range(rings - 2):
        for s in range(segments):
            a, b = ring(r, s), ring(r, s + 1)
            c, d = ring(r + 1, s), ring(r + 1, s + 1)
            faces.append([a, c, b])
            faces.append([b, c, d])
    return Mesh(vertices, np.array(faces))
