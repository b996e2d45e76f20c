"""
Fuzzy Shape Registration - Registration Drivers
Coarse-to-fine registration of a source point set to target points or camera rays
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from energy import FuzzyObjective, KernelConfig, RayBundle
from errors import DegenerateInputError, InvalidParameterError, OptimizationError
from geometry import (
    Aabb,
    Normalization,
    SimilarityTransform,
    as_points,
    centroid,
    denormalize_transform,
    normalize_to_unit_cube,
    subsample,
    transform_compose,
    transform_inverse,
)
from solver import LmConfig, Schedule, lm_minimize

logger = logging.getLogger(__name__)

MODES = ("rigid", "similarity")
MIN_POINTS = 3
MIN_RAYS = 4


@dataclass
class LevelRecord:
    """Outcome of one rung of the sigma ladder"""

    sigma: float
    fraction: float
    n_source: int
    n_target: int
    iterations: int
    accepted_steps: int
    rejected_steps: int
    initial_energy: float
    final_energy: float
    termination: str


@dataclass
class RegistrationResult:
    theta: SimilarityTransform
    levels: List[LevelRecord] = field(default_factory=list)
    converged: bool = False
    mode: str = "rigid"
    initial_final_energy: float = float("nan")
    kept_initial: bool = False

    @property
    def final_energy(self) -> float:
        """Energy of theta at the last ladder level, the start's own energy when it was kept"""
        if self.kept_initial:
            return self.initial_final_energy
        return self.levels[-1].final_energy if self.levels else float("nan")

    def levels_frame(self) -> pd.DataFrame:
        """Per-level trace, one row per sigma"""
        columns = list(LevelRecord.__dataclass_fields__)
        return pd.DataFrame([vars(level) for level in self.levels], columns=columns)

    def summary(self) -> dict:
        T = self.theta
        return {
            "mode": self.mode,
            "converged": self.converged,
            "levels": len(self.levels),
            "iterations": sum(level.iterations for level in self.levels),
            "final_energy": self.final_energy,
            "kept_initial": self.kept_initial,
            "quaternion": T.unit_q.tolist(),
            "translation": T.t.tolist(),
            "scale": T.s,
        }


def default_initial_transform(D, S) -> SimilarityTransform:
    """Identity rotation and scale, translation moving D's centroid onto S's"""
    return SimilarityTransform(t=centroid(S) - centroid(D))


def _level_size(count: int, fraction: float, minimum: int) -> int:
    return min(count, max(minimum, math.ceil(fraction * count)))


def _to_unit(theta: SimilarityTransform, norm: Normalization) -> SimilarityTransform:
    """N o theta o N^-1"""
    N = norm.as_transform()
    return transform_compose(N, transform_compose(theta, transform_inverse(N)))


def _params_to_transform(params, mode: str, scale: float) -> SimilarityTransform:
    return SimilarityTransform.from_params(params, mode, scale)


def _run_ladder(source, target, theta_unit: SimilarityTransform, mode: str, schedule: Schedule,
                kernel: KernelConfig, lm: LmConfig, norm: Normalization) -> RegistrationResult:
    """Shared ladder loop; source, target and theta_unit are already normalized"""
    is_rays = isinstance(target, RayBundle)
    minimum = MIN_RAYS if is_rays else MIN_POINTS
    scale = theta_unit.s
    params = theta_unit.to_params(mode)
    params0 = params.copy()
    levels = []
    objective = None

    for index, (sigma, fraction) in enumerate(schedule.levels()):
        n_d = _level_size(len(source), fraction, minimum)
        n_t = _level_size(len(target), fraction, minimum)
        D_level = subsample(source, n_d, schedule.seed)
        if is_rays:
            T_level = RayBundle(subsample(target.directions, n_t, schedule.seed + 1))
        else:
            T_level = subsample(target, n_t, schedule.seed + 1)

        objective = FuzzyObjective(D_level, T_level, kernel.with_sigma(sigma), mode=mode, scale=scale)
        jacobian_fn = None if is_rays else objective.jacobian
        try:
            params, stats = lm_minimize(objective, params, lm, jacobian_fn=jacobian_fn)
        except OptimizationError as exc:
            best = exc.theta if exc.theta is not None else params
            theta = denormalize_transform(_params_to_transform(best, mode, scale).normalized(), norm)
            raise OptimizationError(
                f"level {index} (sigma={sigma:g}): {exc}", theta=theta, stats=exc.stats
            ) from exc

        params[:4] /= np.linalg.norm(params[:4])
        levels.append(LevelRecord(
            sigma=sigma,
            fraction=fraction,
            n_source=n_d,
            n_target=n_t,
            iterations=stats.iterations,
            accepted_steps=stats.accepted_steps,
            rejected_steps=stats.rejected_steps,
            initial_energy=stats.initial_energy,
            final_energy=stats.final_energy,
            termination=stats.termination,
        ))
        logger.info(
            "level %d sigma %.4g points %d/%d iterations %d energy %.6e -> %.6e (%s)",
            index, sigma, n_d, n_t, stats.iterations, stats.initial_energy, stats.final_energy, stats.termination,
        )

    start_energy = objective.energy(params0)
    kept_initial = start_energy < levels[-1].final_energy
    if kept_initial:
        logger.warning(
            "ladder ended above the starting energy at the final level (%.6e > %.6e), keeping the start",
            levels[-1].final_energy, start_energy,
        )
        params = params0

    theta_unit = _params_to_transform(params, mode, scale).normalized()
    return RegistrationResult(
        theta=denormalize_transform(theta_unit, norm),
        levels=levels,
        converged=levels[-1].termination != "max_iters",
        mode=mode,
        initial_final_energy=start_energy,
        kept_initial=kept_initial,
    )


def register(
    D,
    S,
    theta0: Optional[SimilarityTransform] = None,
    mode: str = "rigid",
    schedule: Optional[Schedule] = None,
    kernel: Optional[KernelConfig] = None,
    lm: Optional[LmConfig] = None,
) -> RegistrationResult:
    """
    Align source points D to target points S

    Both sets go through S's unit-cube normalization, the sigma ladder runs in
    those units and the returned transform maps D onto S in original units.
    """
    if mode not in MODES:
        raise InvalidParameterError(f"mode must be one of {MODES}, got {mode!r}")
    D = as_points(D, "source")
    S = as_points(S, "target")
    if len(D) < MIN_POINTS or len(S) < MIN_POINTS:
        raise DegenerateInputError(f"need at least {MIN_POINTS} source and target points, got {len(D)} and {len(S)}")
    schedule = schedule or Schedule()
    kernel = kernel or KernelConfig()
    lm = lm or LmConfig()
    theta0 = theta0 if theta0 is not None else default_initial_transform(D, S)
    if mode == "rigid" and theta0.s != 1.0:
        raise InvalidParameterError(f"rigid registration needs a unit-scale theta0, got scale {theta0.s}")

    S_unit, D_unit, norm = normalize_to_unit_cube(S, D)
    logger.info("register %s: %d source points, %d target points, %d levels",
                mode, len(D), len(S), len(schedule.sigmas()))
    return _run_ladder(D_unit, S_unit, _to_unit(theta0, norm), mode, schedule, kernel, lm, norm)


def register_rays(
    D,
    rays: RayBundle,
    theta0: Optional[SimilarityTransform] = None,
    schedule: Optional[Schedule] = None,
    kernel: Optional[KernelConfig] = None,
    lm: Optional[LmConfig] = None,
) -> RegistrationResult:
    """
    Rigidly align 3D points D to camera rays through the origin

    D is scaled about the origin by its own largest bounding-box edge so the
    center of projection stays put; ray directions need no normalization.
    A bundle whose directions span less than a plane cannot constrain the
    pose: theta0 comes back unchanged with converged False.
    """
    D = as_points(D, "source")
    if not isinstance(rays, RayBundle):
        rays = RayBundle(rays)
    if len(D) < MIN_RAYS or len(rays) < MIN_RAYS:
        raise DegenerateInputError(f"need at least {MIN_RAYS} points and rays, got {len(D)} and {len(rays)}")
    schedule = schedule or Schedule()
    kernel = kernel or KernelConfig()
    lm = lm or LmConfig()
    theta0 = theta0 if theta0 is not None else SimilarityTransform.identity()
    if theta0.s != 1.0:
        raise InvalidParameterError("ray alignment is rigid; theta0 must have unit scale")

    if np.linalg.matrix_rank(rays.directions, tol=1e-9) < 2:
        logger.warning("all %d rays are parallel, pose is unconstrained; returning the initial transform", len(rays))
        return RegistrationResult(theta=theta0.normalized(), levels=[], converged=False, mode="rigid")

    edge = Aabb.from_points(D).largest_edge
    if edge <= 0.0:
        raise DegenerateInputError("source point set has zero extent on every axis")
    norm = Normalization(center=np.zeros(3), scale=1.0 / edge)
    logger.info("register rays: %d points, %d rays, %d levels", len(D), len(rays), len(schedule.sigmas()))
    return _run_ladder(norm.apply(D), rays, _to_unit(theta0, norm), "rigid", schedule, kernel, lm, norm)


def register_two_start(
    D,
    S,
    theta0: Optional[SimilarityTransform] = None,
    mode: str = "rigid",
    schedule: Optional[Schedule] = None,
    kernel: Optional[KernelConfig] = None,
    lm: Optional[LmConfig] = None,
) -> RegistrationResult:
    """
    Register from theta0 (centroid alignment by default) and from the same
    start flipped 180 degrees about X around D's centroid; keep the lower
    final energy
    """
    D = as_points(D, "source")
    S = as_points(S, "target")
    aligned = theta0 if theta0 is not None else default_initial_transform(D, S)
    flip = SimilarityTransform.from_rotation([1.0, 0.0, 0.0], 180.0, center=centroid(D))
    flipped = transform_compose(aligned, flip)

    results = []
    for name, start in (("aligned", aligned), ("flipped", flipped)):
        result = register(D, S, start, mode, schedule, kernel, lm)
        logger.info("start %s final energy %.6e", name, result.final_energy)
        results.append(result)
    return min(results, key=lambda r: r.final_energy)
