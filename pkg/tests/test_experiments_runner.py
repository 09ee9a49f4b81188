# Copyright (c) Microsoft. All rights reserved.

"""Tests for the batch runner and per-run artifacts."""

import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import pytest
from opentelemetry.trace import NoOpTracer

from selfplay_ail.errors import NumericalDegeneracyError
from selfplay_ail.experiments.artifacts import (
    CSV_COLUMNS,
    RunTrace,
    artifact_rows,
    gap_radius,
    read_artifact,
    trace_from_game,
    write_artifact,
)
from selfplay_ail.experiments.runner import RunPlan, execute_run, plan_runs, run
from selfplay_ail.game.engine import averaged_gap, game_value, run_selfplay
from selfplay_ail.models.game import BoxRegularizer, GameConfig, RegularizerSpec
from selfplay_ail.models.run_config import ExperimentKind, validate_run_config
from selfplay_ail.models.tables import ContextDistribution, PolicyTable, RewardTable

DATA_DIR = Path(__file__).parent / "data"

SMALL = {
    "seeds": [0, 1],
    "bandit": {"n_contexts": 2, "n_responses": 3},
    "game": {"iterations": 6},
    "spif": {"iterations": 3, "inner_steps": 15},
    "baseline": {"iterations": 3, "inner_steps": 15},
    "sweep": {"horizons": [4, 8, 16], "c_values": [0.125, 2.0]},
}


def _config(kind: str, out_dir: Path, **sections):
    raw = {**SMALL, "kind": kind, "out_dir": str(out_dir)}
    raw.update(sections)
    return validate_run_config(raw)


def test_plan_runs_and_stems(tmp_path):
    """Test the expansion of sweeps into per-point runs."""
    assert [p.stem for p in plan_runs(_config("spif", tmp_path))] == ["spif_seed0", "spif_seed1"]
    c_stems = [p.stem for p in plan_runs(_config("c_ablation", tmp_path))]
    assert c_stems == [
        "c_ablation_seed0_c0.125",
        "c_ablation_seed0_c2",
        "c_ablation_seed1_c0.125",
        "c_ablation_seed1_c2",
    ]
    sweep = plan_runs(_config("gap_rate_sweep", tmp_path))
    assert [p.stem for p in sweep[:3]] == [
        "gap_rate_sweep_seed0_K4",
        "gap_rate_sweep_seed0_K8",
        "gap_rate_sweep_seed0_K16",
    ]
    ablation = plan_runs(_config("regularizer_ablation", tmp_path))
    assert [p.point["zeta"] for p in ablation[:2]] == [0.001, 0.0]


def test_spif_run_writes_artifacts(tmp_path):
    """Test the files, golden header and summary of a SPIF batch."""
    summary = run(_config("spif", tmp_path / "out"))
    out = tmp_path / "out"

    expected_header = (DATA_DIR / "artifact_header.csv").read_text(encoding="utf-8").strip()
    for stem in ("spif_seed0", "spif_seed1"):
        assert (out / f"{stem}.csv").read_text(encoding="utf-8").splitlines()[0] == expected_header
        assert (out / f"{stem}.steps.csv").exists()
        assert (out / f"{stem}.meta.json").exists()

    written = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert [r["stem"] for r in written["runs"]] == ["spif_seed0", "spif_seed1"]
    assert written["config"]["kind"] == "spif"
    assert summary["runs"][0]["iterations"] == 3
    assert summary["wall_clock_seconds"] >= 0


def test_artifact_contents(tmp_path):
    """Test row 0, row count, step count and metadata of one run."""
    run(_config("spif", tmp_path, seeds=[3]))
    artifact = read_artifact(tmp_path / "spif_seed3.csv")

    assert list(artifact.rows[0]) == list(CSV_COLUMNS)
    assert len(artifact.rows) == 4
    assert len(artifact.steps) == 3 * 15
    first = artifact.rows[0]
    assert first["J"] == 0.0
    # The gap box covers every averaged reward and is never smaller than 1/c.
    assert artifact.meta["gap_radius"] >= 0.5
    assert first["dual_gap"] == pytest.approx(2 * artifact.meta["gap_radius"] * first["tv_expert"])
    assert artifact.meta["kind"] == "spif"
    assert artifact.meta["seed"] == 3
    assert artifact.meta["c"] == 2.0
    assert len(artifact.meta["fingerprint"]) == 64
    assert artifact.meta["config"]["spif"]["inner_steps"] == 15


def test_runs_are_deterministic(tmp_path):
    """Test that identical configurations give byte-identical CSVs."""
    run(_config("spif", tmp_path / "a"))
    run(_config("spif", tmp_path / "b"))
    for name in ("spif_seed0.csv", "spif_seed0.steps.csv", "spif_seed1.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("kind", ["game", "spin", "linear_spin", "sppo", "inpo", "iter_dpo"])
def test_every_method_produces_finite_rows(tmp_path, kind):
    """Test that each single-run kind executes and records K + 1 rows."""
    config = _config(kind, tmp_path, seeds=[0])
    result = execute_run(RunPlan(ExperimentKind(kind), 0), config, NoOpTracer())
    iterations = config.game.iterations if kind == "game" else config.baseline.iterations
    assert len(result.rows) == iterations + 1
    assert all(math.isfinite(value) for row in result.rows for value in row.values())
    assert result.meta["c"] is None


def test_closed_form_methods_record_zero_loss(tmp_path):
    """Test that iterative DPO logs zero losses and no inner steps."""
    result = execute_run(RunPlan(ExperimentKind.ITER_DPO, 0), _config("iter_dpo", tmp_path), NoOpTracer())
    assert all(row["loss"] == 0.0 and row["grad_inf_norm"] == 0.0 for row in result.rows)
    assert result.trace.steps == []


def test_gap_rate_sweep_summary(tmp_path):
    """Test that the sweep summary reports one exponent entry per seed."""
    summary = run(_config("gap_rate_sweep", tmp_path))
    assert set(summary["rate_exponents"]) == {"0", "1"}
    assert len(summary["runs"]) == 6


def test_c_ablation_summary(tmp_path):
    """Test that the ablation summary groups final TV by c."""
    summary = run(_config("c_ablation", tmp_path))
    assert set(summary["final_tv_by_c"]) == {"0.125", "2"}
    assert all(len(values) == 2 for values in summary["final_tv_by_c"].values())


def test_unwritable_output_directory(tmp_path):
    """Test that an output path blocked by a file is reported with its path."""
    blocker = tmp_path / "blocked"
    blocker.write_text("", encoding="utf-8")
    with pytest.raises(OSError, match="cannot create output directory"):
        run(_config("spif", blocker / "out"))


def test_write_artifact_reports_path(tmp_path):
    """Test that write failures name the offending file."""
    with pytest.raises(OSError, match="cannot write artifact"):
        write_artifact(tmp_path / "missing" / "run", [], [], {})


def test_read_artifact_missing_file(tmp_path):
    """Test that reading a missing artifact raises OSError."""
    with pytest.raises(OSError, match="cannot read artifact"):
        read_artifact(tmp_path / "nothing.csv")


def test_non_finite_values_are_rejected(small_instance):
    """Test that a non-finite metric aborts row construction."""
    config = GameConfig(
        iterations=2,
        beta=1.0,
        r_max=1.0,
        regularizer=RegularizerSpec(psi=BoxRegularizer(r_max=1.0), bregman_weight=1.0),
    )
    history = run_selfplay(config, small_instance.p_star, small_instance.p_ref, small_instance.rho)
    trace = dataclasses.replace(trace_from_game(history, 1.0, 1.0), losses=[0.0, math.nan])
    with pytest.raises(NumericalDegeneracyError):
        artifact_rows(trace, small_instance.p_star, small_instance.rho)


def _hand_trace() -> RunTrace:
    uniform = PolicyTable.uniform(1, 2)
    return RunTrace(
        policies=[uniform, uniform, uniform],
        rewards=[RewardTable(np.array([[3.0, -3.0]]), 3.0), RewardTable(np.array([[1.0, -1.0]]), 1.0)],
        kl_to_expert=[0.1, 0.1, 0.1],
        max_abs_dr=[3.0, 1.0],
        losses=[0.0, 0.0],
        grad_norms=[0.0, 0.0],
        r_max=1.0,
    )


def test_gap_radius_widens_to_cover_averaged_rewards():
    """Test that rewards outside the declared box widen the gap box."""
    trace = _hand_trace()
    expert = PolicyTable(np.array([[0.75, 0.25]]))
    rho = ContextDistribution.uniform(1)
    assert gap_radius(trace) == 3.0

    rows = artifact_rows(trace, expert, rho)
    # Radius 3 and TV 1/4: max term 1.5; r_bar = (3, -3) then (2, -2) gives min terms -1.5 and -1.
    assert rows[0]["dual_gap"] == pytest.approx(1.5)
    assert rows[1]["dual_gap"] == pytest.approx(3.0)
    assert rows[2]["dual_gap"] == pytest.approx(2.5)

    for r_bar in ([[3.0, -3.0]], [[2.0, -2.0]]):
        _, max_term, min_term = averaged_gap(PolicyTable.uniform(1, 2), np.array(r_bar), expert, rho, 3.0)
        assert min_term <= game_value(PolicyTable.uniform(1, 2), np.array(r_bar), expert, rho) <= max_term


def test_gap_radius_keeps_declared_box_when_rewards_fit():
    """Test that rewards inside the box leave the radius alone."""
    trace = dataclasses.replace(_hand_trace(), r_max=5.0)
    assert gap_radius(trace) == 5.0


def test_spin_gap_box_covers_its_unbounded_rewards(tmp_path):
    """Test that the logged SPIN gap uses a box holding every averaged reward."""
    result = execute_run(RunPlan(ExperimentKind.SPIN, 0), _config("spin", tmp_path, seeds=[0]), NoOpTracer())
    rewards = [r.values for r in result.trace.rewards]
    largest = max(np.abs(np.mean(rewards[:k], axis=0)).max() for k in range(1, len(rewards) + 1))

    assert result.meta["gap_radius"] >= result.trace.r_max
    assert result.meta["gap_radius"] >= largest - 1e-12
    assert all(row["dual_gap"] >= 0 for row in result.rows)
