"""
Fuzzy Shape Registration - Levenberg-Marquardt Solver
Damped Gauss-Newton minimization of residual vectors, finite-difference Jacobians
and the coarse-to-fine sigma ladder
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from errors import InvalidParameterError, NumericalError, OptimizationError

logger = logging.getLogger(__name__)

JACOBIAN_MODES = ("finite-difference", "analytic")


@dataclass(frozen=True)
class LmConfig:
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    max_iters: int = 100
    step_tol: float = 1e-10
    energy_tol: float = 1e-12
    jacobian_mode: str = "analytic"
    fd_step: float = 1e-6
    lambda_max: float = 1e12

    def __post_init__(self):
        if not self.lambda0 > 0.0:
            raise InvalidParameterError(f"lambda0 must be > 0, got {self.lambda0}")
        if not (self.lambda_up > 1.0 and self.lambda_down > 1.0):
            raise InvalidParameterError("lambda_up and lambda_down must be > 1")
        if self.max_iters < 1:
            raise InvalidParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (self.step_tol > 0.0 and self.energy_tol > 0.0 and self.fd_step > 0.0):
            raise InvalidParameterError("tolerances and finite-difference step must be > 0")
        if self.jacobian_mode not in JACOBIAN_MODES:
            raise InvalidParameterError(f"jacobian_mode must be one of {JACOBIAN_MODES}, got {self.jacobian_mode!r}")


@dataclass
class LmStats:
    """Bookkeeping for one lm_minimize call"""

    iterations: int = 0
    accepted_steps: int = 0
    rejected_steps: int = 0
    initial_energy: float = float("nan")
    final_energy: float = float("nan")
    termination: str = ""
    converged: bool = False
    energies: List[float] = field(default_factory=list)
    best_theta: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Schedule:
    """
    Coarse-to-fine plan: sigma ladder plus the fraction of each set kept per level

    Fractions shorter than the ladder are padded with 1.0; longer ones are cut to
    the ladder length and the final level always uses the full sets.
    """

    sigma0: float = 0.5
    sigma_final: float = 0.02
    sigma_factor: float = 2.0
    resolution_fractions: Tuple[float, ...] = (0.1, 0.25, 0.5, 1.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "resolution_fractions", tuple(float(f) for f in self.resolution_fractions))
        fr = self.resolution_fractions
        if not fr:
            raise InvalidParameterError("resolution_fractions must not be empty")
        if any(not 0.0 < f <= 1.0 for f in fr):
            raise InvalidParameterError(f"resolution fractions must lie in (0, 1], got {fr}")
        if any(b < a for a, b in zip(fr, fr[1:])):
            raise InvalidParameterError(f"resolution fractions must be non-decreasing, got {fr}")
        make_sigma_ladder(self.sigma0, self.sigma_final, self.sigma_factor)

    def sigmas(self) -> List[float]:
        return make_sigma_ladder(self.sigma0, self.sigma_final, self.sigma_factor)

    def levels(self) -> List[Tuple[float, float]]:
        """(sigma, fraction) per ladder level"""
        sigmas = self.sigmas()
        fractions = list(self.resolution_fractions[: len(sigmas)])
        fractions += [1.0] * (len(sigmas) - len(fractions))
        fractions[-1] = 1.0
        return list(zip(sigmas, fractions))


def make_sigma_ladder(sigma0: float, sigma_final: float, factor: float) -> List[float]:
    """[sigma0, sigma0/f, sigma0/f^2, ...] while above sigma_final, ending exactly at sigma_final"""
    if not (sigma0 >= sigma_final > 0.0):
        raise InvalidParameterError(f"need sigma0 >= sigma_final > 0, got {sigma0}, {sigma_final}")
    if not factor > 1.0:
        raise InvalidParameterError(f"sigma factor must be > 1, got {factor}")
    ladder = []
    value = float(sigma0)
    while value > sigma_final:
        ladder.append(value)
        value /= factor
    if not ladder or ladder[-1] != sigma_final:
        ladder.append(float(sigma_final))
    return ladder


def _checked(e, where: str) -> np.ndarray:
    e = np.asarray(e, dtype=float).ravel()
    if not np.all(np.isfinite(e)):
        raise NumericalError(f"non-finite residuals {where}")
    return e


def fd_jacobian(residual_fn: Callable, theta, h0: float = 1e-6) -> np.ndarray:
    """Central differences with per-parameter step h0 * (1 + |theta_l|)"""
    theta = np.asarray(theta, dtype=float)
    columns = []
    for l in range(len(theta)):
        h = h0 * (1.0 + abs(theta[l]))
        plus, minus = theta.copy(), theta.copy()
        plus[l] += h
        minus[l] -= h
        e_plus = _checked(residual_fn(plus), "in finite-difference Jacobian")
        e_minus = _checked(residual_fn(minus), "in finite-difference Jacobian")
        columns.append((e_plus - e_minus) / (2.0 * h))
    return np.column_stack(columns)


def lm_minimize(
    residual_fn: Callable,
    theta0,
    cfg: Optional[LmConfig] = None,
    jacobian_fn: Optional[Callable] = None,
) -> Tuple[np.ndarray, LmStats]:
    """
    Levenberg-Marquardt with Marquardt diagonal scaling

    Each iteration solves (J^T J + lambda diag(J^T J)) delta = -J^T e. A step is
    kept only if it lowers the energy, so the final energy never exceeds the
    initial one. jacobian_fn is used when given and cfg asks for an analytic
    Jacobian, central differences otherwise.
    """
    cfg = cfg or LmConfig()
    use_analytic = jacobian_fn is not None and cfg.jacobian_mode == "analytic"

    def jac(th):
        if use_analytic:
            J = np.asarray(jacobian_fn(th), dtype=float)
            if not np.all(np.isfinite(J)):
                raise NumericalError("non-finite analytic Jacobian")
            return J
        return fd_jacobian(residual_fn, th, cfg.fd_step)

    theta = np.asarray(theta0, dtype=float).copy()
    e = _checked(residual_fn(theta), "at the initial parameters")
    E = float(e @ e)
    stats = LmStats(initial_energy=E, final_energy=E, energies=[E], best_theta=theta.copy())
    lam = cfg.lambda0
    J = jac(theta)

    for iteration in range(cfg.max_iters):
        stats.iterations = iteration + 1
        g = J.T @ e
        if E == 0.0 or not np.any(g):
            stats.termination = "gradient"
            break
        H = J.T @ J
        diag = np.diag(H).copy()
        floor = max(float(diag.mean()), np.finfo(float).tiny) * 1e-12
        diag = np.maximum(diag, floor)

        accepted = False
        while True:
            try:
                delta = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= cfg.lambda_up
                if lam > cfg.lambda_max:
                    stats.termination = "singular"
                    stats.final_energy = E
                    raise OptimizationError(
                        "damped normal matrix stayed singular", theta=theta.copy(), stats=stats
                    )
                continue

            if np.linalg.norm(delta) < cfg.step_tol:
                stats.termination = "step"
                break
            candidate = theta + delta
            e_new = np.asarray(residual_fn(candidate), dtype=float).ravel()
            E_new = float(e_new @ e_new) if np.all(np.isfinite(e_new)) else np.inf
            if E_new < E:
                accepted = True
                break
            stats.rejected_steps += 1
            lam *= cfg.lambda_up
            if lam > cfg.lambda_max:
                stats.termination = "damping"
                break

        if not accepted:
            break

        relative_drop = (E - E_new) / E
        theta, e, E = candidate, e_new, E_new
        stats.accepted_steps += 1
        stats.energies.append(E)
        stats.best_theta = theta.copy()
        lam = max(lam / cfg.lambda_down, 1e-15)
        logger.debug("lm iter %d energy %.6e lambda %.1e", iteration + 1, E, lam)
        if relative_drop < cfg.energy_tol:
            stats.termination = "energy"
            break
        J = jac(theta)
    else:
        stats.termination = "max_iters"

    stats.final_energy = E
    stats.converged = stats.termination != "max_iters"
    return theta, stats

