"""
Fuzzy Shape Registration - Error Metrics
Ground-truth vertex error, exact cloud-to-mesh distance and a point-to-point ICP
baseline used for comparison runs
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import svd
from scipy.spatial import cKDTree

from errors import DegenerateInputError
from geometry import SimilarityTransform, as_points, quat_from_matrix
from voxelizer import Mesh

logger = logging.getLogger(__name__)

PAIR_BUDGET = 2_000_000


def mean_vertex_distance(theta_est: SimilarityTransform, theta_gt: SimilarityTransform, model) -> float:
    """Mean over model vertices of |theta_est v - theta_gt v|"""
    V = as_points(model, "model")
    if len(V) == 0:
        raise DegenerateInputError("model has no vertices")
    return float(np.mean(np.linalg.norm(theta_est.apply(V) - theta_gt.apply(V), axis=1)))


def _dot(x, y):
    return np.einsum("...i,...i->...", x, y)


def closest_points_on_triangles(P: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """
    Closest point on each triangle (a, b, c) to each point of P

    P is (k, 3), corners are (m, 3); returns (k, m, 3). Voronoi-region
    classification: vertex regions first, then edges, then the face interior.
    """
    p = P[:, None, :]
    ab, ac, bc = b - a, c - a, c - b
    ap, bp, cp = p - a, p - b, p - c
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        out = a + ab * (vb / denom)[..., None] + ac * (vc / denom)[..., None]
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        on_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        out = np.where(on_bc[..., None], b + bc * w_bc[..., None], out)
        w_ac = d2 / (d2 - d6)
        on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        out = np.where(on_ac[..., None], a + ac * w_ac[..., None], out)
        out = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, out)
        v_ab = d1 / (d1 - d3)
        on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        out = np.where(on_ab[..., None], a + ab * v_ab[..., None], out)
        out = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, out)
        out = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, out)
    return out


def point_mesh_distances(P, mesh: Mesh) -> np.ndarray:
    """Exact distance from every point to its nearest mesh face"""
    P = as_points(P)
    if len(mesh.faces) == 0:
        raise DegenerateInputError("mesh has no faces")
    tri = mesh.triangles()
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    chunk = max(1, PAIR_BUDGET // len(tri))
    out = np.empty(len(P))
    for start in range(0, len(P), chunk):
        block = P[start:start + chunk]
        nearest = closest_points_on_triangles(block, a, b, c)
        dist = np.linalg.norm(nearest - block[:, None, :], axis=2)
        out[start:start + chunk] = np.min(np.where(np.isfinite(dist), dist, np.inf), axis=1)
    return out


def cloud_to_mesh_distance(P, mesh: Mesh) -> Tuple[float, float]:
    """(mean, max) point-to-mesh distance"""
    d = point_mesh_distances(P, mesh)
    return float(d.mean()), float(d.max())


def kabsch(P: np.ndarray, Q: np.ndarray) -> Optional[SimilarityTransform]:
    """
    Rigid transform minimizing sum |R p + t - q|^2 over paired rows

    Returns None when the pairs do not pin down a rotation (rank of the
    cross-covariance below 2).
    """
    p_mean, q_mean = P.mean(axis=0), Q.mean(axis=0)
    H = (P - p_mean).T @ (Q - q_mean)
    U, sv, Vt = svd(H)
    if sv[0] <= 0.0 or sv[1] <= 1e-12 * sv[0]:
        return None
    correction = np.eye(3)
    if np.linalg.det(Vt.T @ U.T) < 0:
        correction[2, 2] = -1.0
    R = Vt.T @ correction @ U.T
    return SimilarityTransform(q=quat_from_matrix(R), t=q_mean - R @ p_mean)


@dataclass
class IcpResult:
    theta: SimilarityTransform
    mse: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    failed: bool = False


def icp_baseline(
    D,
    S,
    theta0: Optional[SimilarityTransform] = None,
    max_iters: int = 50,
    tol: float = 1e-10,
) -> IcpResult:
    """
    Point-to-point ICP: nearest neighbours then a closed-form rigid fit

    An update is kept only if it does not raise the mean squared
    correspondence error; iteration stops when the error drops by less than
    tol (relative) or after max_iters fits.
    """
    D = as_points(D, "source")
    S = as_points(S, "target")
    if len(D) < 3 or len(S) < 3:
        raise DegenerateInputError(f"ICP needs at least 3 points per set, got {len(D)} and {len(S)}")
    theta = (theta0 if theta0 is not None else SimilarityTransform.identity()).normalized()
    tree = cKDTree(S)
    dist, idx = tree.query(theta.apply(D))
    mse = float(np.mean(dist * dist))
    result = IcpResult(theta=theta, mse=[mse])

    for iteration in range(max_iters):
        fit = kabsch(D, S[idx])
        if fit is None:
            logger.warning("ICP: degenerate cross-covariance at iteration %d", iteration)
            result.failed = True
            break
        dist, idx_new = tree.query(fit.apply(D))
        mse_new = float(np.mean(dist * dist))
        result.iterations = iteration + 1
        if mse_new > mse:
            result.converged = True
            break
        drop = mse - mse_new
        theta, mse, idx = fit, mse_new, idx_new
        result.mse.append(mse)
        if drop <= tol * max(mse, np.finfo(float).tiny) or mse == 0.0:
            result.converged = True
            break

    result.theta = theta
    logger.debug("ICP finished after %d iterations, mse %.6e", result.iterations, mse)
    return result
