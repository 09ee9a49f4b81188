# Copyright (c) Microsoft. All rights reserved.

"""Unit tests for run-file validation."""

from pathlib import Path

import pytest

from selfplay_ail.config import get_default_run_settings
from selfplay_ail.errors import ConfigValidationError
from selfplay_ail.models.run_config import ExperimentKind, load_run_config, validate_run_config


@pytest.fixture(autouse=True)
def default_out_dir(monkeypatch):
    """Keep the environment from changing the default output directory."""
    monkeypatch.delenv("SELFPLAY_AIL_OUT_DIR", raising=False)


def test_minimal_config_is_completed_from_defaults():
    """Test that a file naming only the kind gets every other value from the defaults."""
    config = validate_run_config({"kind": "spif"})
    assert config.kind is ExperimentKind.SPIF
    assert config.seeds == [0]
    assert config.out_dir == Path("runs")
    assert config.spif.c == 2.0
    assert config.bandit.n_responses == 8
    assert config.sweep.horizons == [16, 64, 256, 1024]


def test_nested_overrides_keep_sibling_defaults():
    """Test that overriding one key of a section keeps the others."""
    config = validate_run_config({"kind": "game", "game": {"beta": 4.0}})
    assert config.game.beta == 4.0
    assert config.game.zeta == 1.0
    assert config.game.regularizer == "box"


def test_custom_defaults_are_used():
    """Test that injected defaults replace the built-in ones."""
    defaults = get_default_run_settings()
    defaults["spif"]["inner_steps"] = 7
    assert validate_run_config({"kind": "spif"}, defaults).spif.inner_steps == 7


def test_every_violation_is_reported_at_once():
    """Test that schema and precondition problems are collected together."""
    raw = {
        "kind": "game",
        "seeds": [1, 1],
        "game": {"zeta": 0.0, "beta": -1.0},
        "bandit": {"colour": "red"},
    }
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_run_config(raw)
    violations = excinfo.value.violations
    assert any(v.startswith("game.beta") for v in violations)
    assert any(v.startswith("bandit.colour") for v in violations)
    assert "seeds: seeds must be distinct" in violations
    assert len(violations) >= 3


def test_unknown_kind_is_rejected():
    """Test that the experiment kind must be known."""
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_run_config({"kind": "ppo"})
    assert any(v.startswith("kind") for v in excinfo.value.violations)


@pytest.mark.parametrize(
    ("raw", "prefix"),
    [
        ({"kind": "game", "game": {"zeta": 0.0}}, "game.zeta"),
        ({"kind": "game", "game": {"regularizer": "mixed_quadratic", "schedule": "sqrt_horizon"}}, "game.schedule"),
        ({"kind": "gap_rate_sweep", "sweep": {"horizons": [16, 64]}}, "sweep.horizons"),
        ({"kind": "regularizer_ablation", "spif": {"zeta": 0.0}}, "spif.zeta"),
        ({"kind": "spif", "spif": {"history_window": 3}}, "spif.history_window"),
        ({"kind": "inpo", "baseline": {"eta": 0.5, "tau": 1.0}}, "baseline.tau"),
    ],
)
def test_method_preconditions(raw, prefix):
    """Test the per-method preconditions checked before any run starts."""
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_run_config(raw)
    assert any(v.startswith(prefix) for v in excinfo.value.violations)


def test_preconditions_only_apply_to_their_kind():
    """Test that a zero game zeta is accepted when the game is not run."""
    assert validate_run_config({"kind": "spin", "game": {"zeta": 0.0}}).kind is ExperimentKind.SPIN


def test_load_run_config_from_toml(tmp_path):
    """Test reading a TOML run file."""
    path = tmp_path / "run.toml"
    path.write_text(
        'kind = "c_ablation"\nseeds = [0, 1]\nout_dir = "out"\n\n[sweep]\nc_values = [0.5, 2.0]\n',
        encoding="utf-8",
    )
    config = load_run_config(path)
    assert config.kind is ExperimentKind.C_ABLATION
    assert config.seeds == [0, 1]
    assert config.sweep.c_values == [0.5, 2.0]


def test_load_run_config_errors(tmp_path):
    """Test that malformed TOML is a validation error and a missing file an OSError."""
    broken = tmp_path / "broken.toml"
    broken.write_text("kind = \n", encoding="utf-8")
    with pytest.raises(ConfigValidationError):
        load_run_config(broken)
    with pytest.raises(OSError):
        load_run_config(tmp_path / "missing.toml")
