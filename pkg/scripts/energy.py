"""
Fuzzy Shape Registration - Fuzzy Correspondence Energy
Gaussian kernels, self-density normalization, proximity / coverage scores and the
residual vector minimized by the solver, for point targets and camera-ray targets
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import expit

from errors import InvalidParameterError
from geometry import (
    Ray,
    SimilarityTransform,
    as_points,
    point_ray_distance,
    quat_rotate,
    quat_rotation_jacobian,
)

logger = logging.getLogger(__name__)

TRUNCATION_MODES = ("exact", "cutoff")


@dataclass(frozen=True)
class KernelConfig:
    """
    sigma: Gaussian scale in unit-cube units
    k: sigmoid steepness
    alpha: proximity weight, coverage weight is 1 - alpha
    truncation: "exact" double loop, or "cutoff" at cutoff * sigma via a kd-tree
    """

    sigma: float = 0.5
    k: float = 2.0
    alpha: float = 0.5
    truncation: str = "exact"
    cutoff: float = 4.0

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise InvalidParameterError(f"sigma must be > 0, got {self.sigma}")
        if not self.k > 0.0:
            raise InvalidParameterError(f"k must be > 0, got {self.k}")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidParameterError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.truncation not in TRUNCATION_MODES:
            raise InvalidParameterError(f"truncation must be one of {TRUNCATION_MODES}, got {self.truncation!r}")
        if self.truncation == "cutoff" and self.cutoff < 3.0:
            raise InvalidParameterError(f"cutoff multiple must be >= 3, got {self.cutoff}")

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha

    @property
    def radius(self) -> Optional[float]:
        return self.cutoff * self.sigma if self.truncation == "cutoff" else None

    def with_sigma(self, sigma: float) -> "KernelConfig":
        return replace(self, sigma=sigma)


@dataclass(frozen=True, eq=False)
class RayBundle:
    """Ordered unit directions of rays leaving the center of projection"""

    directions: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=float)
        if d.ndim == 1 and d.size == 3:
            d = d.reshape(1, 3)
        if d.ndim != 2 or d.shape[1] != 3:
            raise InvalidParameterError(f"ray directions must have shape (m, 3), got {d.shape}")
        norms = np.linalg.norm(d, axis=1)
        if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
            raise InvalidParameterError("ray directions must be finite and nonzero")
        object.__setattr__(self, "directions", d / norms[:, None])

    @classmethod
    def from_rays(cls, rays) -> "RayBundle":
        return cls(np.array([r.d for r in rays]).reshape(-1, 3))

    def __len__(self) -> int:
        return len(self.directions)

    def __getitem__(self, index) -> Ray:
        return Ray(self.directions[index])

    def take(self, indices) -> "RayBundle":
        return RayBundle(self.directions[indices])


Target = Union[np.ndarray, RayBundle]


@dataclass(frozen=True, eq=False)
class SelfDensity:
    """Per-element normalizers: each entry is a kernel sum including the self term"""

    values: np.ndarray
    sigma: float
    kind: str

    def check(self, count: int, sigma: float, kind: str) -> None:
        if len(self.values) != count or self.sigma != sigma or self.kind != kind:
            raise InvalidParameterError(
                f"density built for ({self.kind}, n={len(self.values)}, sigma={self.sigma}) "
                f"does not match ({kind}, n={count}, sigma={sigma})"
            )


def _check_sigma(sigma: float) -> None:
    if not sigma > 0.0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")


def _target_kind(target) -> str:
    return "rays" if isinstance(target, RayBundle) else "points"


def _target_elements(target) -> np.ndarray:
    if isinstance(target, RayBundle):
        return target.directions
    return as_points(target, "target")


def kernel(x, y, sigma: float):
    _check_sigma(sigma)
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return np.exp(-np.einsum("...i,...i->...", diff, diff) / (2.0 * sigma * sigma))


def kernel_ray(x, r, sigma: float):
    _check_sigma(sigma)
    d = point_ray_distance(x, r)
    return np.exp(-d * d / (2.0 * sigma * sigma))


# Pairwise kernel matrices. Dense ndarrays in exact mode, CSR matrices when a
# cutoff radius is given; every consumer below works with either.

def _pair_kernel(X, Y, sigma: float, radius: Optional[float] = None):
    """Kernel values and squared distances between rows of X and rows of Y"""
    if radius is None:
        d2 = cdist(X, Y, "sqeuclidean")
        return np.exp(-d2 / (2.0 * sigma * sigma)), d2
    pairs = cKDTree(X).sparse_distance_matrix(cKDTree(Y), radius, output_type="ndarray")
    d2 = pairs["v"] ** 2
    shape = (len(X), len(Y))
    index = (pairs["i"], pairs["j"])
    K = sparse.csr_matrix((np.exp(-d2 / (2.0 * sigma * sigma)), index), shape=shape)
    D2 = sparse.csr_matrix((d2, index), shape=shape)
    return K, D2


def _ray_kernel(X, R, sigma: float, radius: Optional[float] = None):
    """Kernel values and squared point-to-line distances, points X against unit directions R"""
    along = X @ R.T
    d2 = np.maximum(np.einsum("ij,ij->i", X, X)[:, None] - along * along, 0.0)
    K = np.exp(-d2 / (2.0 * sigma * sigma))
    if radius is not None:
        K[d2 > radius * radius] = 0.0
    return K, d2


def _row_sums(M) -> np.ndarray:
    return np.asarray(M.sum(axis=1)).ravel()


def _col_sums(M) -> np.ndarray:
    return np.asarray(M.sum(axis=0)).ravel()


def _scale_columns(M, w):
    if sparse.issparse(M):
        return (M @ sparse.diags(w)).tocsr()
    return M * w[None, :]


def _scale_rows(M, w):
    if sparse.issparse(M):
        return (sparse.diags(w) @ M).tocsr()
    return M * w[:, None]


def _safe_directions(X) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    out = np.zeros_like(X)
    nz = norms > 0.0
    out[nz] = X[nz] / norms[nz, None]
    return out


def self_density_points(Y, sigma: float, radius: Optional[float] = None) -> SelfDensity:
    _check_sigma(sigma)
    Y = as_points(Y)
    K, _ = _pair_kernel(Y, Y, sigma, radius)
    return SelfDensity(_row_sums(K), sigma, "points")


def self_density_rays(R: RayBundle, sigma: float, radius: Optional[float] = None) -> SelfDensity:
    _check_sigma(sigma)
    K, _ = _ray_kernel(R.directions, R.directions, sigma, radius)
    np.fill_diagonal(K, 1.0)
    return SelfDensity(_row_sums(K), sigma, "rays")


def source_density_rays(D, sigma: float, radius: Optional[float] = None) -> SelfDensity:
    """
    Source normalizer for ray targets

    Entry i sums exp(-(|x_l|^2 - (x_l . x_i/|x_i|)^2) / 2 sigma^2) over l, i.e. the
    kernel of every source point against the ray through x_i.
    """
    _check_sigma(sigma)
    D = as_points(D)
    K, _ = _ray_kernel(D, _safe_directions(D), sigma, radius)
    np.fill_diagonal(K, 1.0)
    return SelfDensity(_col_sums(K), sigma, "source-rays")


def source_density(D, target: Target, sigma: float, radius: Optional[float] = None) -> SelfDensity:
    if isinstance(target, RayBundle):
        return source_density_rays(D, sigma, radius)
    return self_density_points(D, sigma, radius)


def target_density(target: Target, sigma: float, radius: Optional[float] = None) -> SelfDensity:
    if isinstance(target, RayBundle):
        return self_density_rays(target, sigma, radius)
    return self_density_points(target, sigma, radius)


def _affinity(X, target: Target, sigma: float, radius: Optional[float] = None):
    if isinstance(target, RayBundle):
        return _ray_kernel(X, target.directions, sigma, radius)
    return _pair_kernel(X, as_points(target, "target"), sigma, radius)


def proximity_rows(D, target: Target, dens: SelfDensity, sigma: float, radius: Optional[float] = None) -> np.ndarray:
    """Row sums of the normalized proximity matrix for every source point"""
    D = as_points(D, "source")
    dens.check(len(_target_elements(target)), sigma, _target_kind(target))
    K, _ = _affinity(D, target, sigma, radius)
    return _row_sums(_scale_columns(K, 1.0 / dens.values))


def proximity_row(x, target: Target, dens: SelfDensity, sigma: float, radius: Optional[float] = None) -> float:
    return float(proximity_rows(np.reshape(x, (1, 3)), target, dens, sigma, radius)[0])


def coverage_cols(D, target: Target, dens_source: SelfDensity, sigma: float, radius: Optional[float] = None) -> np.ndarray:
    """Column sums of the normalized coverage matrix for every target element"""
    D = as_points(D, "source")
    kind = "source-rays" if isinstance(target, RayBundle) else "points"
    dens_source.check(len(D), sigma, kind)
    K, _ = _affinity(D, target, sigma, radius)
    return _col_sums(_scale_rows(K, 1.0 / dens_source.values))


def coverage_col(element, D, dens_source: SelfDensity, sigma: float, radius: Optional[float] = None) -> float:
    """Coverage sum of a single target element: a point (3,) or a Ray"""
    if isinstance(element, Ray):
        target = RayBundle(element.d)
    else:
        target = as_points(element, "target element")
    return float(coverage_cols(D, target, dens_source, sigma, radius)[0])


def proximity(D, target: Target, cfg: KernelConfig) -> float:
    D = as_points(D, "source")
    dens = target_density(target, cfg.sigma, cfg.radius)
    rows = proximity_rows(D, target, dens, cfg.sigma, cfg.radius)
    return float(np.mean(expit(cfg.k * rows)))


def coverage(D, target: Target, cfg: KernelConfig) -> float:
    D = as_points(D, "source")
    dens = source_density(D, target, cfg.sigma, cfg.radius)
    cols = coverage_cols(D, target, dens, cfg.sigma, cfg.radius)
    return float(np.mean(expit(cfg.k * cols)))


def _residual_vector(p_rows: np.ndarray, c_cols: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    n, m = len(p_rows), len(c_cols)
    e_p = (cfg.alpha / n) * (1.0 - expit(cfg.k * p_rows))
    e_c = (cfg.beta / m) * (1.0 - expit(cfg.k * c_cols))
    return np.concatenate([e_p, e_c])


def residuals(theta: SimilarityTransform, D, target: Target, cfg: KernelConfig) -> np.ndarray:
    """Residual vector of length |D| + |target|: proximity terms first, coverage terms last"""
    X = theta.apply(as_points(D, "source"))
    dens_t = target_density(target, cfg.sigma, cfg.radius)
    dens_s = source_density(X, target, cfg.sigma, cfg.radius)
    K, _ = _affinity(X, target, cfg.sigma, cfg.radius)
    p_rows = _row_sums(_scale_columns(K, 1.0 / dens_t.values))
    c_cols = _col_sums(_scale_rows(K, 1.0 / dens_s.values))
    return _residual_vector(p_rows, c_cols, cfg)


def energy(theta: SimilarityTransform, D, target: Target, cfg: KernelConfig) -> float:
    e = residuals(theta, D, target, cfg)
    return float(e @ e)


class FuzzyObjective:
    """
    Residual function over solver parameters for one (source, target, kernel) level

    Parameters are q (4), t (3) and, in similarity mode, log s. The target
    normalizer is computed once. For point targets the source normalizer depends
    only on inter-point distances, so it is cached per scale; for ray targets it
    depends on the transformed positions and is rebuilt on every evaluation.
    """

    def __init__(self, source, target: Target, cfg: KernelConfig, mode: str = "rigid", scale: float = 1.0):
        if mode not in ("rigid", "similarity"):
            raise InvalidParameterError(f"mode must be rigid or similarity, got {mode!r}")
        self.source = as_points(source, "source")
        self.target = target
        self.cfg = cfg
        self.mode = mode
        self.scale = scale
        self.is_rays = isinstance(target, RayBundle)
        self._elements = _target_elements(target)
        self.target_density = target_density(target, cfg.sigma, cfg.radius)
        self._source_cache = {}
        self.evaluations = 0

    @property
    def n_params(self) -> int:
        return 8 if self.mode == "similarity" else 7

    @property
    def n_residuals(self) -> int:
        return len(self.source) + len(self._elements)

    def transform(self, params) -> SimilarityTransform:
        return SimilarityTransform.from_params(params, self.mode, self.scale)

    def _source_density(self, X: np.ndarray, s: float) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        sigma, radius = self.cfg.sigma, self.cfg.radius
        if self.is_rays:
            return source_density_rays(X, sigma, radius).values, None
        if s not in self._source_cache:
            if len(self._source_cache) > 8:
                self._source_cache.clear()
            K, D2 = _pair_kernel(X, X, sigma, radius)
            values = _row_sums(K)
            # d/d(log s) of each kernel sum; inter-point distances scale with s
            if sparse.issparse(K):
                weighted = K.multiply(D2)
            else:
                weighted = K * D2
            dvalues = -_row_sums(weighted) / (sigma * sigma)
            self._source_cache[s] = (values, dvalues)
        return self._source_cache[s]

    def _scores(self, params):
        T = self.transform(params)
        X = T.apply(self.source)
        K, _ = _affinity(X, self.target, self.cfg.sigma, self.cfg.radius)
        dens_s, ddens_s = self._source_density(X, T.s)
        KP = _scale_columns(K, 1.0 / self.target_density.values)
        KC = _scale_rows(K, 1.0 / dens_s)
        return T, X, K, KP, KC, dens_s, ddens_s

    def __call__(self, params) -> np.ndarray:
        self.evaluations += 1
        _, _, _, KP, KC, _, _ = self._scores(params)
        return _residual_vector(_row_sums(KP), _col_sums(KC), self.cfg)

    def energy(self, params) -> float:
        e = self(params)
        return float(e @ e)

    def _point_jacobian(self, T: SimilarityTransform) -> np.ndarray:
        """d(transformed point)/d(params), shape (n, 3, n_params)"""
        J = np.zeros((len(self.source), 3, self.n_params))
        J[:, :, :4] = T.s * quat_rotation_jacobian(T.q, self.source)
        J[:, :, 4:7] = np.eye(3)
        if self.mode == "similarity":
            J[:, :, 7] = T.s * quat_rotate(T.q, self.source)
        return J

    def jacobian(self, params) -> np.ndarray:
        """Analytic residual Jacobian for point targets"""
        if self.is_rays:
            raise InvalidParameterError("analytic Jacobian is only available for point targets")
        cfg = self.cfg
        sigma2 = cfg.sigma * cfg.sigma
        T, X, K, KP, KC, dens_s, ddens_s = self._scores(params)
        Y = self._elements
        n, m, P = len(X), len(Y), self.n_params
        Jx = self._point_jacobian(T)

        p_rows = _row_sums(KP)
        grad_p = -(p_rows[:, None] * X - KP @ Y) / sigma2
        dp = np.einsum("nk,nkp->np", grad_p, Jx)

        c_cols = _col_sums(KC)
        a = np.einsum("nk,nkp->np", X, Jx)
        weighted_J = np.asarray(KC.T @ Jx.reshape(n, 3 * P)).reshape(m, 3, P)
        dc = -(np.asarray(KC.T @ a) - np.einsum("mk,mkp->mp", Y, weighted_J)) / sigma2
        if self.mode == "similarity":
            dw = -ddens_s / (dens_s * dens_s)
            dc[:, 7] += np.asarray(K.T @ dw).ravel()

        sp = expit(cfg.k * p_rows)
        sc = expit(cfg.k * c_cols)
        Jp = -(cfg.alpha / n) * (cfg.k * sp * (1.0 - sp))[:, None] * dp
        Jc = -(cfg.beta / m) * (cfg.k * sc * (1.0 - sc))[:, None] * dc
        return np.vstack([Jp, Jc])
