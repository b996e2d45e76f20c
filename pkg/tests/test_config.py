"""Tests for parameter defaults, validation, config files and override precedence."""

import pytest

from config import DEFAULT_PARAMS, SCENARIO_PRESETS, RunConfig, normalize_params
from errors import InvalidParameterError, ParseError


def test_defaults_match_run_config():
    assert RunConfig().as_dict() == DEFAULT_PARAMS
    assert normalize_params({}) == DEFAULT_PARAMS


def test_strings_are_coerced():
    params = normalize_params({"sigma0": "0.25", "max_iters": "40", "two_start": "yes",
                               "resolution_fractions": "0.2, 0.5 1"})
    assert params["sigma0"] == 0.25
    assert params["max_iters"] == 40
    assert params["two_start"] is True
    assert params["resolution_fractions"] == (0.2, 0.5, 1.0)


@pytest.mark.parametrize("params", [
    {"alpha": 1.5},
    {"sigma_final": 0.9},
    {"sigma_factor": 1.0},
    {"mode": "affine"},
    {"max_iters": "2.5"},
    {"two_start": "maybe"},
    {"stride": 0},
    {"truncation": "cutoff", "cutoff": 2.0},
    {"jacobian_mode": "symbolic"},
    {"mystery_knob": 1},
])
def test_invalid_values_are_rejected(params):
    with pytest.raises(InvalidParameterError):
        normalize_params(params)


def test_config_file_then_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# tuned for scans\nsigma0 = 0.3\nalpha = 0.7\nseed = 5\n")
    config = RunConfig.build(path, {"alpha": 0.4, "seed": None})
    assert config.sigma0 == 0.3
    assert config.alpha == 0.4
    assert config.seed == 5
    assert config.k == DEFAULT_PARAMS["k"]


def test_config_file_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("sigma0 = 0.3\nsigma0 = 0.4\n")
    with pytest.raises(ParseError, match=":2:"):
        RunConfig.build(path)


def test_component_configs_follow_the_run_config():
    config = RunConfig.build(overrides={"sigma0": 0.4, "sigma_final": 0.1, "k": 3.0, "max_iters": 7})
    assert config.schedule().sigmas() == pytest.approx([0.4, 0.2, 0.1])
    assert config.kernel_config().sigma == 0.4
    assert config.kernel_config(0.1).k == 3.0
    assert config.lm_config().max_iters == 7


def test_presets_name_known_kinds():
    assert {p["kind"] for p in SCENARIO_PRESETS.values()} == {"sweep", "similarity", "rays", "voxelize"}
    assert SCENARIO_PRESETS["Ray Alignment"]["focal_px"] == 1000.0
