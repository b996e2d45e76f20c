"""
Fuzzy Shape Registration - Benchmarks
Rotation-sweep robustness protocol, synthetic recovery scenarios, success rates
and comparison figures
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from camera import CameraIntrinsics, PixelMask, project_points, reprojection_errors  # noqa: E402
from energy import KernelConfig, RayBundle  # noqa: E402
from errors import InvalidParameterError, RegistrationError  # noqa: E402
from geometry import (  # noqa: E402
    Aabb,
    SimilarityTransform,
    as_points,
    centroid,
    quat_from_axis_angle,
    transform_compose,
    transform_inverse,
)
from metrics import icp_baseline, mean_vertex_distance  # noqa: E402
from registration import register, register_rays, register_two_start  # noqa: E402
from shapes import asymmetric_shape, corrupt, cube_mesh, nested_cubes_mesh, random_rotation, sphere_mesh  # noqa: E402
from solver import LmConfig, Schedule  # noqa: E402
from voxelizer import mesh_to_pointset, voxelize_surface  # noqa: E402

logger = logging.getLogger(__name__)

AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}
SWEEP_COLUMNS = ["axis", "angle_deg", "trial", "mean_error", "success"]
SUCCESS_FRACTION = 0.01

# registrar(D, S, theta0) -> estimated transform mapping D onto S
Registrar = Callable[[np.ndarray, np.ndarray, SimilarityTransform], SimilarityTransform]


@dataclass(frozen=True)
class SweepSpec:
    axis: str = "x"
    step_degrees: float = 5.0
    range_degrees: Tuple[float, float] = (0.0, 90.0)
    trials: int = 1
    subset_fraction: float = 1.0
    noise_fraction: float = 0.0
    outlier_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.axis not in AXES:
            raise InvalidParameterError(f"axis must be one of x, y, z, got {self.axis!r}")
        if not self.step_degrees > 0.0:
            raise InvalidParameterError(f"step must be > 0, got {self.step_degrees}")
        lo, hi = self.range_degrees
        if lo > hi:
            raise InvalidParameterError(f"angle range must be ordered, got {self.range_degrees}")
        if self.trials < 1:
            raise InvalidParameterError(f"trials must be >= 1, got {self.trials}")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise InvalidParameterError(f"subset fraction must lie in (0, 1], got {self.subset_fraction}")
        if self.noise_fraction < 0.0 or self.outlier_fraction < 0.0:
            raise InvalidParameterError("noise and outlier fractions must be >= 0")


@dataclass
class SweepReport:
    """One row per trial, ordered by (axis, angle, trial)"""

    rows: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=SWEEP_COLUMNS))
    threshold: float = float("nan")

    @property
    def success_rate(self) -> float:
        return success_rate(self, self.threshold)

    def per_step(self) -> pd.DataFrame:
        """Mean error and success rate per (axis, angle)"""
        grouped = self.rows.groupby(["axis", "angle_deg"], sort=True)
        return grouped.agg(mean_error=("mean_error", "mean"), success_rate=("success", "mean")).reset_index()

    def success_range(self, axis: Optional[str] = None) -> Tuple[float, float]:
        """Largest angle interval starting at the sweep minimum where every trial succeeded"""
        steps = self.per_step()
        if axis is not None:
            steps = steps[steps["axis"] == axis]
        start, end = float("nan"), float("nan")
        for _, row in steps.sort_values("angle_deg").iterrows():
            if row["success_rate"] < 1.0:
                break
            start = row["angle_deg"] if math.isnan(start) else start
            end = row["angle_deg"]
        return start, end

    def to_csv(self, path) -> None:
        self.rows.to_csv(path, index=False)

    @classmethod
    def concat(cls, reports: Sequence["SweepReport"]) -> "SweepReport":
        frames = [r.rows for r in reports if len(r.rows)]
        rows = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=SWEEP_COLUMNS)
        return cls(rows=rows, threshold=reports[0].threshold if reports else float("nan"))


def success_rate(report, threshold: Optional[float] = None) -> float:
    """Fraction of trials whose mean error is strictly below threshold"""
    if isinstance(report, SweepReport):
        errors = report.rows["mean_error"].to_numpy(dtype=float)
        threshold = report.threshold if threshold is None else threshold
    else:
        errors = np.asarray(report, dtype=float).ravel()
    if len(errors) == 0:
        raise InvalidParameterError("cannot compute a success rate over zero trials")
    if threshold is None or math.isnan(threshold):
        raise InvalidParameterError("a success threshold is required")
    return float(np.mean(errors < threshold))


def sweep_angles(spec: SweepSpec) -> np.ndarray:
    """min, min + step, ... up to max inclusive"""
    lo, hi = spec.range_degrees
    count = int(math.floor((hi - lo) / spec.step_degrees + 1e-9)) + 1
    return lo + spec.step_degrees * np.arange(count)


def fuzzy_registrar(
    mode: str = "rigid",
    schedule: Optional[Schedule] = None,
    kernel: Optional[KernelConfig] = None,
    lm: Optional[LmConfig] = None,
    two_start: bool = False,
) -> Registrar:
    def run(D, S, theta0):
        if two_start:
            return register_two_start(D, S, theta0, mode, schedule, kernel, lm).theta
        return register(D, S, theta0, mode, schedule, kernel, lm).theta
    return run


def icp_registrar(max_iters: int = 50, tol: float = 1e-10) -> Registrar:
    def run(D, S, theta0):
        return icp_baseline(D, S, theta0, max_iters=max_iters, tol=tol).theta
    return run


def rotation_sweep(model, scene, theta_gt: SimilarityTransform, spec: SweepSpec, registrar: Registrar,
                   threshold: Optional[float] = None) -> SweepReport:
    """
    Rotate the source away from its true pose in fixed angle steps and register back

    Each trial draws the source from the model (subset, noise and outliers as
    configured), places it at the ground-truth pose, rotates it by the step angle
    about the sweep axis through the placed model centroid and starts the
    registrar from the centroid-aligned pose. The error is the mean vertex
    distance on the clean model. Registrar exceptions count as failed trials.
    The default success threshold is 1% of the placed model's bounding-box
    diagonal.
    """
    model = as_points(model, "model")
    scene = as_points(scene, "scene")
    if threshold is None:
        threshold = SUCCESS_FRACTION * Aabb.from_points(theta_gt.apply(model)).diagonal
    axis_index = "xyz".index(spec.axis)
    pivot = centroid(theta_gt.apply(model))
    scene_center = centroid(scene)

    rows = []
    for step, angle in enumerate(sweep_angles(spec)):
        perturb = SimilarityTransform.from_rotation(AXES[spec.axis], float(angle), center=pivot)
        placed = transform_compose(perturb, theta_gt)
        for trial in range(spec.trials):
            rng = np.random.default_rng([spec.seed, axis_index, step, trial])
            D = placed.apply(corrupt(model, rng, spec.subset_fraction, spec.noise_fraction, spec.outlier_fraction))
            theta0 = SimilarityTransform(t=scene_center - centroid(D))
            try:
                estimate = registrar(D, scene, theta0)
                error = mean_vertex_distance(transform_compose(estimate, placed), theta_gt, model)
            except (RegistrationError, np.linalg.LinAlgError) as exc:
                logger.warning("sweep %s %.1f deg trial %d failed: %s", spec.axis, angle, trial, exc)
                error = float("inf")
            rows.append({
                "axis": spec.axis,
                "angle_deg": float(angle),
                "trial": trial,
                "mean_error": error,
                "success": bool(error < threshold),
            })
            logger.info("sweep %s %.1f deg trial %d error %.4g", spec.axis, angle, trial, error)
    return SweepReport(rows=pd.DataFrame(rows, columns=SWEEP_COLUMNS), threshold=threshold)


def rigid_fixture(points: int = 2000, seed: int = 0):
    """(model, scene, theta_gt): the asymmetric shape and a fixed rigid placement of it"""
    model = asymmetric_shape(points, seed)
    theta_gt = SimilarityTransform(
        q=quat_from_axis_angle([1.0, 1.0, 0.0], np.radians(15.0)),
        t=[0.3, -0.2, 0.5],
    )
    return model, theta_gt.apply(model), theta_gt


def similarity_trials(preset: Dict, schedule: Optional[Schedule] = None, kernel: Optional[KernelConfig] = None,
                      lm: Optional[LmConfig] = None) -> pd.DataFrame:
    """Recover a random-axis rotation, a small translation and a scale drawn from the preset's scale set"""
    model = asymmetric_shape(preset["points"], preset["seed"])
    rows = []
    for trial in range(preset["trials"]):
        rng = np.random.default_rng([preset["seed"], 1, trial])
        scale = float(preset["scales"][trial % len(preset["scales"])])
        rotation = random_rotation(rng, preset["angle_degrees"])
        truth = SimilarityTransform(q=rotation.q, t=rng.uniform(-0.2, 0.2, 3), s=scale)
        scene = truth.apply(model)
        threshold = SUCCESS_FRACTION * Aabb.from_points(scene).diagonal
        D = corrupt(model, rng, preset["subset_fraction"], preset["noise_fraction"], preset["outlier_fraction"])
        try:
            estimate = register(D, scene, mode="similarity", schedule=schedule, kernel=kernel, lm=lm).theta
            error = mean_vertex_distance(estimate, truth, model)
            scale_est = estimate.s
        except RegistrationError as exc:
            logger.warning("similarity trial %d failed: %s", trial, exc)
            error, scale_est = float("inf"), float("nan")
        scale_error = abs(scale_est / scale - 1.0) if np.isfinite(scale_est) else float("inf")
        rows.append({
            "trial": trial,
            "scale_gt": scale,
            "scale_est": scale_est,
            "scale_error": scale_error,
            "mean_error": error,
            "success": bool(error < threshold and scale_error < 0.02),
        })
    return pd.DataFrame(rows)


def ray_camera(preset: Dict) -> CameraIntrinsics:
    width, height = preset["width"], preset["height"]
    f = preset["focal_px"]
    return CameraIntrinsics(fx=f, fy=f, cx=0.5 * (width - 1), cy=0.5 * (height - 1), width=width, height=height)


def ray_trial(preset: Dict, trial: int, schedule: Optional[Schedule] = None, kernel: Optional[KernelConfig] = None,
              lm: Optional[LmConfig] = None) -> Dict:
    """
    One synthetic LiDAR-to-camera alignment

    Scene points sit about 5 units in front of the camera. Rays come from the
    ground-truth projections; the start pose is the truth rotated by the preset
    angle about a random axis through the scene centroid and shifted by the
    preset fraction of the scene depth.
    """
    K = ray_camera(preset)
    rng = np.random.default_rng([preset["seed"], 2, trial])
    body = asymmetric_shape(preset["points"], preset["seed"] + trial)
    in_camera = 0.8 * body + np.array([0.0, 0.0, 5.0])
    truth = SimilarityTransform(q=random_rotation(rng, 30.0).q, t=rng.uniform(-0.5, 0.5, 3))
    D = transform_inverse(truth).apply(in_camera)

    gt_proj = project_points(K, truth, D)
    visible = gt_proj.in_image(K)
    D = D[visible]
    rays = RayBundle(truth.apply(D))

    depth = float(np.mean(in_camera[:, 2]))
    wobble = random_rotation(rng, preset["angle_degrees"])
    shift = rng.normal(size=3)
    shift *= preset["translation_fraction"] * depth / np.linalg.norm(shift)
    pivot = centroid(truth.apply(D))
    theta0 = transform_compose(
        SimilarityTransform(q=wobble.q, t=pivot - wobble.apply(pivot) + shift),
        truth,
    )

    result = register_rays(D, rays, theta0, schedule, kernel, lm)
    expected = project_points(K, truth, D)
    got = project_points(K, result.theta, D)
    px = np.hypot(got.u - expected.u, got.v - expected.v)
    px = np.where(np.isfinite(px), px, np.inf)

    labeled = np.zeros((K.height, K.width), dtype=bool)
    cols, rows = expected.pixel_indices()
    labeled[rows, cols] = True
    report = reprojection_errors(K, result.theta, D, PixelMask(labeled))
    return {
        "trial": trial,
        "points": len(D),
        "mean_px": float(np.mean(px)),
        "p95_px": float(np.percentile(px, 95)),
        "converged": result.converged,
        "success": bool(np.mean(px) < 2.0 and np.percentile(px, 95) < 3.0),
        "report": report,
    }


def ray_trials(preset: Dict, schedule: Optional[Schedule] = None, kernel: Optional[KernelConfig] = None,
               lm: Optional[LmConfig] = None):
    """(per-trial DataFrame, reprojection report of the first trial)"""
    outcomes = [ray_trial(preset, t, schedule, kernel, lm) for t in range(preset["trials"])]
    frame = pd.DataFrame([{k: v for k, v in o.items() if k != "report"} for o in outcomes])
    return frame, outcomes[0]["report"]


def voxelizer_check(preset: Dict) -> pd.DataFrame:
    """Shell point counts for the cube, sphere and enclosed-component fixtures"""
    rows = []
    for resolution in preset["resolutions"]:
        cube = mesh_to_pointset(cube_mesh(), resolution)
        sphere_cells = voxelize_surface(sphere_mesh(), resolution).count
        nested = mesh_to_pointset(nested_cubes_mesh(), resolution)
        inner = np.all((nested > 0.3) & (nested < 0.7), axis=1).sum()
        rows.append({
            "resolution": resolution,
            "cube_points": len(cube),
            "cube_expected": resolution ** 3 - (resolution - 2) ** 3,
            "sphere_surface_cells": sphere_cells,
            "nested_points": len(nested),
            "nested_inner_points": int(inner),
        })
    return pd.DataFrame(rows)


def plot_sweep_curves(reports: Dict[str, SweepReport], path, title: str = "Rotation sweep") -> Path:
    """Mean error per angle, one panel per axis, one line per registrar"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    colors = {"fuzzy": "#2563eb", "icp": "#dc2626"}
    axes_present = sorted({a for r in reports.values() for a in r.rows["axis"].unique()})
    fig, axes = plt.subplots(1, max(1, len(axes_present)), figsize=(6 * max(1, len(axes_present)), 5), squeeze=False)
    fig.suptitle(title, fontsize=16, fontweight="bold")

    for ax, axis in zip(axes[0], axes_present):
        for name, report in reports.items():
            steps = report.per_step()
            steps = steps[steps["axis"] == axis]
            ax.plot(steps["angle_deg"], steps["mean_error"].clip(upper=1e3), marker="o", linewidth=2,
                    label=name.upper(), color=colors.get(name))
        threshold = next(iter(reports.values())).threshold
        ax.axhline(threshold, linestyle="--", color="gray", label="success threshold")
        ax.set_yscale("log")
        ax.set_xlabel("Added rotation (degrees)")
        ax.set_ylabel("Mean vertex error")
        ax.set_title(f"Axis {axis.upper()}")
        ax.legend()
        ax.grid(True, alpha=0.3)

    plt.tight_layout()
    plt.savefig(path, dpi=300, bbox_inches="tight")
    plt.close(fig)
    logger.info("sweep figure saved to %s", path)
    return path


def plot_reprojection_histogram(report, path, title: str = "Reprojection error") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(8, 5))
    if len(report.histogram):
        ax.bar(report.bin_edges[:-1], report.histogram, width=1.0, align="edge", color="#16a34a", edgecolor="white")
    ax.set_xlabel("Distance to nearest labelled pixel (px)")
    ax.set_ylabel("Points")
    ax.set_title(f"{title} (mean {report.mean:.2f} px, {report.out_of_image} outside image)")
    ax.grid(True, alpha=0.3, axis="y")
    plt.tight_layout()
    plt.savefig(path, dpi=300, bbox_inches="tight")
    plt.close(fig)
    logger.info("histogram saved to %s", path)
    return path
