"""
Fuzzy Shape Registration - Geometry Core
Quaternions, similarity transforms, rays, bounding boxes, unit-cube normalization
and point-set utilities shared by every other module
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from errors import DegenerateInputError, InvalidParameterError

IDENTITY_QUATERNION = np.array([1.0, 0.0, 0.0, 0.0])


def as_points(points, name: str = "points") -> np.ndarray:
    """Return an (n, 3) float array view of a point set, validating finiteness"""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidParameterError(f"{name} must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError(f"{name} contains non-finite coordinates")
    return arr


def _unit_quaternion(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if q.shape != (4,) or norm == 0.0 or not np.isfinite(norm):
        raise InvalidParameterError(f"quaternion must be a finite nonzero 4-vector, got {q}")
    return q / norm


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of q / ||q|| for q = (w, x, y, z)"""
    w, x, y, z = _unit_quaternion(q)
    return np.array([
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a * b"""
    aw, ax, ay, az = np.asarray(a, dtype=float)
    bw, bx, by, bz = np.asarray(b, dtype=float)
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array([w, -x, -y, -z])


def quat_from_axis_angle(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        raise InvalidParameterError("rotation axis must be nonzero")
    half = 0.5 * angle_rad
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / norm])


def quat_from_matrix(R) -> np.ndarray:
    """Unit quaternion with w >= 0 for a proper rotation matrix"""
    R = np.asarray(R, dtype=float)
    trace = np.trace(R)
    if trace > 0.0:
        s = 2.0 * np.sqrt(trace + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q = q / np.linalg.norm(q)
    return -q if q[0] < 0 else q


def quat_rotate(q, p) -> np.ndarray:
    """Rotate a point (3,) or points (n, 3) by q / ||q||"""
    R = quat_to_matrix(q)
    p = np.asarray(p, dtype=float)
    return p @ R.T


def quat_rotation_jacobian(q, points: np.ndarray) -> np.ndarray:
    """
    Derivative of R(q / ||q||) p with respect to the four raw quaternion components

    Returns an (n, 3, 4) array. Uses R(q) = M(q) / ||q||^2 with M the homogeneous
    quadratic form, so the derivative is (dM/dq_k p - 2 q_k R p) / ||q||^2.
    """
    q = np.asarray(q, dtype=float)
    n2 = float(q @ q)
    if n2 == 0.0:
        raise InvalidParameterError("zero quaternion")
    w, u = q[0], q[1:]
    p = np.asarray(points, dtype=float)
    Rp = quat_rotate(q, p)
    up = p @ u
    out = np.empty(p.shape + (4,))
    out[:, :, 0] = 2.0 * (w * p + np.cross(u, p))
    eye = np.eye(3)
    for a in range(3):
        out[:, :, a + 1] = 2.0 * (
            -u[a] * p
            + p[:, a:a + 1] * u
            + up[:, None] * eye[a]
            + w * np.cross(eye[a], p)
        )
    out -= 2.0 * Rp[:, :, None] * q[None, None, :]
    return out / n2


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """
    x -> s * R(q / ||q||) x + t

    q may be stored unnormalized (the solver treats all four components as free);
    rigid transforms keep s == 1.
    """

    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUATERNION.copy())
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    s: float = 1.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if not np.all(np.isfinite(q)) or not np.any(q):
            raise InvalidParameterError(f"quaternion must be finite and nonzero, got {q}")
        if not np.all(np.isfinite(t)):
            raise InvalidParameterError("translation must be finite")
        if not np.isfinite(self.s) or self.s <= 0.0:
            raise InvalidParameterError(f"scale must be > 0, got {self.s}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", float(self.s))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @classmethod
    def from_rotation(cls, axis, angle_deg: float, center=None) -> "SimilarityTransform":
        """Rotation by angle_deg about an axis through center (origin by default)"""
        q = quat_from_axis_angle(axis, np.radians(angle_deg))
        if center is None:
            return cls(q=q)
        center = np.asarray(center, dtype=float)
        return cls(q=q, t=center - quat_rotate(q, center))

    @classmethod
    def from_matrix(cls, matrix) -> "SimilarityTransform":
        """Decompose a 4x4 similarity matrix"""
        M = np.asarray(matrix, dtype=float)
        A = M[:3, :3]
        s = float(np.cbrt(np.linalg.det(A)))
        if s <= 0.0:
            raise InvalidParameterError("matrix is not a proper similarity")
        return cls(q=quat_from_matrix(A / s), t=M[:3, 3], s=s)

    @property
    def unit_q(self) -> np.ndarray:
        return _unit_quaternion(self.q)

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def matrix(self) -> np.ndarray:
        """Equivalent 4x4 homogeneous matrix"""
        M = np.eye(4)
        M[:3, :3] = self.s * self.rotation_matrix()
        M[:3, 3] = self.t
        return M

    def apply(self, points) -> np.ndarray:
        return transform_apply(self, points)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        return transform_compose(self, other)

    def inverse(self) -> "SimilarityTransform":
        return transform_inverse(self)

    def normalized(self) -> "SimilarityTransform":
        return SimilarityTransform(q=self.unit_q, t=self.t, s=self.s)

    def to_params(self, mode: str = "rigid") -> np.ndarray:
        """Solver parameter vector: q (4), t (3) and log s in similarity mode"""
        if mode == "similarity":
            return np.concatenate([self.q, self.t, [np.log(self.s)]])
        return np.concatenate([self.q, self.t])

    @classmethod
    def from_params(cls, params, mode: str = "rigid", scale: float = 1.0) -> "SimilarityTransform":
        params = np.asarray(params, dtype=float)
        if mode == "similarity":
            return cls(q=params[:4], t=params[4:7], s=float(np.exp(params[7])))
        return cls(q=params[:4], t=params[4:7], s=scale)


def transform_apply(T: SimilarityTransform, points) -> np.ndarray:
    """Map every point to s * R p + t, preserving order"""
    P = np.asarray(points, dtype=float)
    return T.s * quat_rotate(T.q, P) + T.t


def transform_compose(A: SimilarityTransform, B: SimilarityTransform) -> SimilarityTransform:
    """Transform equivalent to applying B first, then A"""
    q = quat_multiply(A.unit_q, B.unit_q)
    t = A.s * quat_rotate(A.q, B.t) + A.t
    return SimilarityTransform(q=q, t=t, s=A.s * B.s)


def transform_inverse(T: SimilarityTransform) -> SimilarityTransform:
    if T.s <= 0.0:
        raise InvalidParameterError(f"scale must be > 0, got {T.s}")
    q_inv = quat_conjugate(T.unit_q)
    s_inv = 1.0 / T.s
    return SimilarityTransform(q=q_inv, t=-s_inv * quat_rotate(q_inv, T.t), s=s_inv)


@dataclass(frozen=True, eq=False)
class Ray:
    """Ray from the center of projection (origin) along a unit direction"""

    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float).reshape(3)
        norm = np.linalg.norm(d)
        if norm == 0.0 or not np.isfinite(norm):
            raise InvalidParameterError("ray direction must be finite and nonzero")
        object.__setattr__(self, "d", d / norm)


@dataclass(frozen=True, eq=False)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float).reshape(3)
        hi = np.asarray(self.max, dtype=float).reshape(3)
        if np.any(lo > hi):
            raise InvalidParameterError(f"box min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def from_points(cls, points) -> "Aabb":
        P = as_points(points)
        if len(P) == 0:
            raise DegenerateInputError("cannot bound an empty point set")
        return cls(P.min(axis=0), P.max(axis=0))

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def largest_edge(self) -> float:
        return float(self.extent.max())

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))


@dataclass(frozen=True, eq=False)
class Normalization:
    """Affine map x -> scale * (x - center)"""

    center: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        if not np.isfinite(self.scale) or self.scale <= 0.0:
            raise InvalidParameterError(f"normalization scale must be > 0, got {self.scale}")

    def apply(self, points) -> np.ndarray:
        return self.scale * (np.asarray(points, dtype=float) - self.center)

    def revert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) / self.scale + self.center

    def as_transform(self) -> SimilarityTransform:
        return SimilarityTransform(t=-self.scale * self.center, s=self.scale)


def normalize_to_unit_cube(S, D) -> Tuple[np.ndarray, np.ndarray, Normalization]:
    """
    Fit the target S into the origin-centred unit cube; D follows the same map

    The map comes from S alone so results scale back to the target's units.
    """
    S = as_points(S, "target")
    D = as_points(D, "source")
    box = Aabb.from_points(S)
    edge = box.largest_edge
    if edge <= 0.0:
        raise DegenerateInputError("target point set has zero extent on every axis")
    norm = Normalization(center=box.center, scale=1.0 / edge)
    return norm.apply(S), norm.apply(D), norm


def denormalize_transform(theta_unit: SimilarityTransform, norm: Normalization) -> SimilarityTransform:
    """N^-1 o theta_unit o N as a single transform in original coordinates"""
    N = norm.as_transform()
    return transform_compose(transform_inverse(N), transform_compose(theta_unit, N))


def point_ray_distance(x, r) -> np.ndarray:
    """Distance from x to the infinite line through the origin along unit r"""
    x = np.asarray(x, dtype=float)
    r = r.d if isinstance(r, Ray) else np.asarray(r, dtype=float)
    along = x @ r
    sq = np.einsum("...i,...i->...", x, x) - along * along
    return np.sqrt(np.maximum(sq, 0.0))


def subsample(points, n: int, seed: int) -> np.ndarray:
    """
    Seeded uniform draw of n points without replacement

    Kept points stay in their original order. The same seed yields nested
    subsets for increasing n, so a resolution ladder only ever adds points.
    """
    P = np.asarray(points, dtype=float)
    if n < 1:
        raise InvalidParameterError(f"subsample size must be >= 1, got {n}")
    if n >= len(P):
        return P
    order = np.random.default_rng(seed).permutation(len(P))
    return P[np.sort(order[:n])]


def centroid(points) -> np.ndarray:
    return as_points(points).mean(axis=0)
