"""
Fuzzy Shape Registration - Camera Rays
Pinhole intrinsics, mask-driven ray bundles, projection, depth images and
reprojection-error reports for 2D-3D alignment
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from energy import RayBundle
from errors import InvalidParameterError
from geometry import Ray, SimilarityTransform, as_points

logger = logging.getLogger(__name__)

NO_DATA = 0.0


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera; integer pixel coordinates address pixel centers"""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise InvalidParameterError(f"focal lengths must be > 0, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise InvalidParameterError(f"image size must be >= 1, got {self.width}x{self.height}")


@dataclass(frozen=True, eq=False)
class PixelMask:
    """Binary image indexed [row, column], i.e. [v, u]"""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or min(values.shape) < 1:
            raise InvalidParameterError(f"mask must be a non-empty 2D array, got shape {values.shape}")
        object.__setattr__(self, "values", values != 0)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def pixels(self) -> np.ndarray:
        """(u, v) of every set pixel in row-major order"""
        rows, cols = np.nonzero(self.values)
        return np.column_stack([cols, rows]).astype(float)

    def check_matches(self, K: CameraIntrinsics) -> None:
        if (self.width, self.height) != (K.width, K.height):
            raise InvalidParameterError(
                f"mask is {self.width}x{self.height} but the camera image is {K.width}x{K.height}"
            )


@dataclass(frozen=True, eq=False)
class Projection:
    """Per-point image coordinates; u, v are NaN where the point is behind the camera"""

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    in_front: np.ndarray

    def __len__(self) -> int:
        return len(self.depth)

    def pixel_indices(self):
        """Nearest pixel column/row for points in front of the camera"""
        u = np.where(self.in_front, self.u, 0.0)
        v = np.where(self.in_front, self.v, 0.0)
        return np.floor(u + 0.5).astype(np.int64), np.floor(v + 0.5).astype(np.int64)

    def in_image(self, K: CameraIntrinsics) -> np.ndarray:
        ok = self.in_front.copy()
        col = np.where(ok, self.u, -1.0)
        row = np.where(ok, self.v, -1.0)
        ok &= (col >= -0.5) & (col < K.width - 0.5) & (row >= -0.5) & (row < K.height - 0.5)
        return ok

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.u, self.v, self.depth])


def pixels_to_directions(K: CameraIntrinsics, u, v) -> np.ndarray:
    d = np.column_stack([
        (np.asarray(u, dtype=float).ravel() - K.cx) / K.fx,
        (np.asarray(v, dtype=float).ravel() - K.cy) / K.fy,
        np.ones(np.size(u)),
    ])
    return d / np.linalg.norm(d, axis=1)[:, None]


def pixel_to_ray(K: CameraIntrinsics, u: float, v: float) -> Ray:
    return Ray(pixels_to_directions(K, [u], [v])[0])


def mask_to_rays(K: CameraIntrinsics, mask: PixelMask, stride: int = 1) -> RayBundle:
    """One ray per set pixel on the stride lattice (rows and columns 0, stride, 2*stride, ...)"""
    if stride < 1:
        raise InvalidParameterError(f"stride must be >= 1, got {stride}")
    mask.check_matches(K)
    sampled = np.zeros_like(mask.values)
    sampled[::stride, ::stride] = mask.values[::stride, ::stride]
    uv = PixelMask(sampled).pixels()
    logger.debug("mask %dx%d stride %d -> %d rays", mask.width, mask.height, stride, len(uv))
    if len(uv) == 0:
        return RayBundle(np.empty((0, 3)))
    return RayBundle(pixels_to_directions(K, uv[:, 0], uv[:, 1]))


def project_points(K: CameraIntrinsics, theta: SimilarityTransform, P) -> Projection:
    """Pinhole projection of theta * P; points with z <= 0 are flagged behind the camera"""
    X = theta.apply(as_points(np.asarray(P, dtype=float).reshape(-1, 3)))
    z = X[:, 2]
    in_front = z > 0.0
    safe_z = np.where(in_front, z, 1.0)
    u = np.where(in_front, K.fx * X[:, 0] / safe_z + K.cx, np.nan)
    v = np.where(in_front, K.fy * X[:, 1] / safe_z + K.cy, np.nan)
    return Projection(u=u, v=v, depth=z, in_front=in_front)


def depth_image(K: CameraIntrinsics, theta: SimilarityTransform, P) -> np.ndarray:
    """Z-buffered depth per pixel, NO_DATA where nothing projects; indexed [row, column]"""
    proj = project_points(K, theta, P)
    ok = proj.in_image(K)
    depth = np.full((K.height, K.width), np.inf)
    if ok.any():
        cols, rows = proj.pixel_indices()
        np.minimum.at(depth, (rows[ok], cols[ok]), proj.depth[ok])
    depth[np.isinf(depth)] = NO_DATA
    return depth


@dataclass(frozen=True, eq=False)
class ReprojectionReport:
    """Distances are for in-image points only, in projection order"""

    distances: np.ndarray
    in_image: np.ndarray
    out_of_image: int
    histogram: np.ndarray
    bin_edges: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.distances.mean()) if len(self.distances) else float("nan")

    @property
    def median(self) -> float:
        return float(np.median(self.distances)) if len(self.distances) else float("nan")

    @property
    def p95(self) -> float:
        return float(np.percentile(self.distances, 95)) if len(self.distances) else float("nan")


def reprojection_errors(K: CameraIntrinsics, theta: SimilarityTransform, P, labeled: PixelMask) -> ReprojectionReport:
    """Pixel distance from each projected point to the nearest labelled pixel, with 1-px bins"""
    labeled.check_matches(K)
    if not labeled.values.any():
        raise InvalidParameterError("labelled mask has no set pixels")
    proj = project_points(K, theta, P)
    ok = proj.in_image(K)
    uv = np.column_stack([proj.u[ok], proj.v[ok]])
    if len(uv):
        distances, _ = cKDTree(labeled.pixels()).query(uv)
        edges = np.arange(0.0, np.ceil(distances.max()) + 2.0)
        histogram, edges = np.histogram(distances, bins=edges)
    else:
        distances = np.empty(0)
        histogram, edges = np.zeros(0, dtype=np.int64), np.zeros(1)
    report = ReprojectionReport(
        distances=distances,
        in_image=ok,
        out_of_image=int((~ok).sum()),
        histogram=histogram,
        bin_edges=edges,
    )
    logger.info("reprojection: %d in image, %d out, mean %.3f px", len(distances), report.out_of_image, report.mean)
    return report
