"""Tests for the Levenberg-Marquardt solver, finite differences and the sigma ladder."""

import numpy as np
import pytest

from errors import InvalidParameterError, NumericalError
from solver import LmConfig, Schedule, fd_jacobian, lm_minimize, make_sigma_ladder


def rosenbrock(theta):
    x, y = theta
    return np.array([10.0 * (y - x * x), 1.0 - x])


def rosenbrock_jacobian(theta):
    x, _ = theta
    return np.array([[-20.0 * x, 10.0], [-1.0, 0.0]])


def test_fd_jacobian_of_identity_residual():
    J = fd_jacobian(lambda th: th, np.array([0.7]))
    np.testing.assert_allclose(J, [[1.0]], atol=1e-9)


def test_fd_jacobian_of_quadratic_residual():
    J = fd_jacobian(lambda th: th ** 2, np.array([3.0]))
    np.testing.assert_allclose(J, [[6.0]], atol=1e-6)


def test_fd_jacobian_rejects_non_finite_residuals():
    with pytest.raises(NumericalError):
        fd_jacobian(lambda th: np.log(th), np.array([0.0]))


def test_linear_residual_converges():
    theta, stats = lm_minimize(lambda th: th - 3.0, np.array([0.0]))
    assert theta[0] == pytest.approx(3.0, abs=1e-8)
    assert stats.converged
    assert stats.final_energy <= stats.initial_energy


def test_rosenbrock_from_standard_start():
    theta, stats = lm_minimize(rosenbrock, np.array([-1.2, 1.0]), LmConfig(max_iters=500))
    np.testing.assert_allclose(theta, [1.0, 1.0], atol=1e-6)
    assert stats.termination != "max_iters"


def test_rosenbrock_with_analytic_jacobian():
    theta, _ = lm_minimize(rosenbrock, np.array([-1.2, 1.0]), LmConfig(max_iters=500), rosenbrock_jacobian)
    np.testing.assert_allclose(theta, [1.0, 1.0], atol=1e-6)


def test_optimal_start_takes_no_steps():
    theta, stats = lm_minimize(lambda th: th - 3.0, np.array([3.0]))
    assert theta[0] == 3.0
    assert stats.accepted_steps == 0
    assert stats.termination == "gradient"


def test_accepted_energies_strictly_decrease():
    _, stats = lm_minimize(rosenbrock, np.array([-1.2, 1.0]), LmConfig(max_iters=500))
    energies = stats.energies
    assert len(energies) == stats.accepted_steps + 1
    assert all(b < a for a, b in zip(energies, energies[1:]))


def test_iteration_cap_is_reported():
    _, stats = lm_minimize(rosenbrock, np.array([-1.2, 1.0]), LmConfig(max_iters=2))
    assert stats.termination == "max_iters"
    assert not stats.converged
    assert stats.final_energy <= stats.initial_energy


def test_non_finite_start_is_rejected():
    with pytest.raises(NumericalError):
        lm_minimize(lambda th: np.array([np.nan]), np.array([1.0]))


def test_lm_config_validation():
    with pytest.raises(InvalidParameterError):
        LmConfig(lambda0=0.0)
    with pytest.raises(InvalidParameterError):
        LmConfig(lambda_up=1.0)
    with pytest.raises(InvalidParameterError):
        LmConfig(jacobian_mode="symbolic")


@pytest.mark.parametrize("sigma0, sigma_final, expected", [
    (0.5, 0.05, [0.5, 0.25, 0.125, 0.0625, 0.05]),
    (0.1, 0.1, [0.1]),
    (0.4, 0.1, [0.4, 0.2, 0.1]),
])
def test_sigma_ladder(sigma0, sigma_final, expected):
    assert make_sigma_ladder(sigma0, sigma_final, 2.0) == pytest.approx(expected)


def test_sigma_ladder_validation():
    with pytest.raises(InvalidParameterError):
        make_sigma_ladder(0.1, 0.5, 2.0)
    with pytest.raises(InvalidParameterError):
        make_sigma_ladder(0.5, 0.1, 1.0)
    with pytest.raises(InvalidParameterError):
        make_sigma_ladder(0.5, 0.0, 2.0)


def test_schedule_pads_fractions_and_ends_at_full_resolution():
    levels = Schedule(sigma0=0.5, sigma_final=0.02).levels()
    assert [f for _, f in levels] == [0.1, 0.25, 0.5, 1.0, 1.0, 1.0]
    assert levels[-1][0] == 0.02
    short = Schedule(sigma0=0.2, sigma_final=0.1, resolution_fractions=(0.3, 0.6, 0.9))
    assert short.levels() == [(0.2, 0.3), (0.1, 1.0)]


def test_schedule_rejects_bad_fractions():
    with pytest.raises(InvalidParameterError):
        Schedule(resolution_fractions=(0.5, 0.2))
    with pytest.raises(InvalidParameterError):
        Schedule(resolution_fractions=(0.0, 1.0))
    with pytest.raises(InvalidParameterError):
        Schedule(resolution_fractions=())
