"""
Fuzzy Shape Registration - Run Configuration
Parameter defaults, benchmark scenario presets, validation and key = value config files
"""

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Optional, Tuple

from energy import KernelConfig
from errors import InvalidParameterError
from fileio import read_key_values
from solver import LmConfig, Schedule

MODES = ("rigid", "similarity", "rays")
RESULTS_DIR = str(Path(__file__).resolve().parent / "results")

DEFAULT_PARAMS = {
    "mode": "rigid",
    "sigma0": 0.5,
    "sigma_final": 0.02,
    "sigma_factor": 2.0,
    "k": 2.0,
    "alpha": 0.5,
    "truncation": "exact",
    "cutoff": 4.0,
    "lambda0": 1e-3,
    "lambda_up": 10.0,
    "lambda_down": 10.0,
    "max_iters": 100,
    "step_tol": 1e-10,
    "energy_tol": 1e-12,
    "jacobian_mode": "analytic",
    "resolution_fractions": (0.1, 0.25, 0.5, 1.0),
    "seed": 0,
    "voxel_resolution": 64,
    "closing_radius": 1,
    "stride": 1,
    "two_start": False,
    "output_dir": RESULTS_DIR,
}

SCENARIO_PRESETS = {
    "Rigid Sweep": {
        "kind": "sweep",
        "mode": "rigid",
        "axes": "xyz",
        "step_degrees": 5.0,
        "range_degrees": (0.0, 60.0),
        "trials": 1,
        "points": 2000,
        "subset_fraction": 0.6,
        "noise_fraction": 0.005,
        "outlier_fraction": 0.1,
        "registrars": ("fuzzy", "icp"),
        "seed": 0,
    },
    "Similarity Recovery": {
        "kind": "similarity",
        "mode": "similarity",
        "scales": (0.5, 0.75, 1.5, 2.0),
        "angle_degrees": 20.0,
        "trials": 10,
        "points": 2000,
        "subset_fraction": 0.6,
        "noise_fraction": 0.005,
        "outlier_fraction": 0.1,
        "seed": 0,
    },
    "Ray Alignment": {
        "kind": "rays",
        "mode": "rays",
        "focal_px": 1000.0,
        "width": 640,
        "height": 480,
        "points": 500,
        "angle_degrees": 10.0,
        "translation_fraction": 0.1,
        "trials": 10,
        "seed": 0,
    },
    "Voxelizer Check": {
        "kind": "voxelize",
        "resolutions": (4, 8, 16),
        "seed": 0,
    },
}

_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        word = str(value).strip().lower()
        if word not in _BOOL_WORDS:
            raise InvalidParameterError(f"{key} must be a boolean, got {value!r}")
        return _BOOL_WORDS[word]
    if isinstance(default, tuple):
        items = value.replace(",", " ").split() if isinstance(value, str) else value
        try:
            return tuple(float(v) for v in items)
        except (TypeError, ValueError):
            raise InvalidParameterError(f"{key} must be a list of numbers, got {value!r}") from None
    if isinstance(default, int):
        try:
            number = float(value)
        except (TypeError, ValueError):
            raise InvalidParameterError(f"{key} must be an integer, got {value!r}") from None
        if not number.is_integer():
            raise InvalidParameterError(f"{key} must be an integer, got {value!r}")
        return int(number)
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise InvalidParameterError(f"{key} must be a number, got {value!r}") from None
    return str(value).strip()


def normalize_params(params: Dict) -> Dict:
    """
    Coerce a partial parameter dict onto DEFAULT_PARAMS

    Unknown keys and out-of-range values raise InvalidParameterError; nothing
    is clamped or silently repaired.
    """
    unknown = sorted(set(params) - set(DEFAULT_PARAMS))
    if unknown:
        raise InvalidParameterError(f"unknown parameter(s): {', '.join(unknown)}")
    merged = dict(DEFAULT_PARAMS)
    for key, value in params.items():
        merged[key] = _coerce(key, value, DEFAULT_PARAMS[key])

    if merged["mode"] not in MODES:
        raise InvalidParameterError(f"mode must be one of {MODES}, got {merged['mode']!r}")
    if merged["voxel_resolution"] < 2:
        raise InvalidParameterError(f"voxel_resolution must be >= 2, got {merged['voxel_resolution']}")
    if merged["closing_radius"] < 0:
        raise InvalidParameterError(f"closing_radius must be >= 0, got {merged['closing_radius']}")
    if merged["stride"] < 1:
        raise InvalidParameterError(f"stride must be >= 1, got {merged['stride']}")

    config = RunConfig(**merged)
    # the component configs carry the numeric invariants
    config.kernel_config()
    config.lm_config()
    config.schedule()
    return merged


def load_config_file(path) -> Dict[str, str]:
    """Raw `key = value` strings from a config file; see normalize_params for typing"""
    return read_key_values(path)


@dataclass(frozen=True)
class RunConfig:
    mode: str = "rigid"
    sigma0: float = 0.5
    sigma_final: float = 0.02
    sigma_factor: float = 2.0
    k: float = 2.0
    alpha: float = 0.5
    truncation: str = "exact"
    cutoff: float = 4.0
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    max_iters: int = 100
    step_tol: float = 1e-10
    energy_tol: float = 1e-12
    jacobian_mode: str = "analytic"
    resolution_fractions: Tuple[float, ...] = (0.1, 0.25, 0.5, 1.0)
    seed: int = 0
    voxel_resolution: int = 64
    closing_radius: int = 1
    stride: int = 1
    two_start: bool = False
    output_dir: str = RESULTS_DIR

    @classmethod
    def build(cls, config_file=None, overrides: Optional[Dict] = None) -> "RunConfig":
        """Defaults, then the config file, then explicit overrides"""
        params = {}
        if config_file is not None:
            params.update(load_config_file(config_file))
        params.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(**normalize_params(params))

    def as_dict(self) -> Dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def kernel_config(self, sigma: Optional[float] = None) -> KernelConfig:
        return KernelConfig(
            sigma=self.sigma0 if sigma is None else sigma,
            k=self.k,
            alpha=self.alpha,
            truncation=self.truncation,
            cutoff=self.cutoff,
        )

    def lm_config(self) -> LmConfig:
        return LmConfig(
            lambda0=self.lambda0,
            lambda_up=self.lambda_up,
            lambda_down=self.lambda_down,
            max_iters=self.max_iters,
            step_tol=self.step_tol,
            energy_tol=self.energy_tol,
            jacobian_mode=self.jacobian_mode,
        )

    def schedule(self) -> Schedule:
        return Schedule(
            sigma0=self.sigma0,
            sigma_final=self.sigma_final,
            sigma_factor=self.sigma_factor,
            resolution_fractions=self.resolution_fractions,
            seed=self.seed,
        )
