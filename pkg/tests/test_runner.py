"""End-to-end run orchestration: simulate/verify/sweep, spike summaries,
trajectory file round-trips, and the negative control where a tampered
trajectory must fail the scoreboard."""

import json
import math

import numpy as np
import pytest

from bnspike import runner
from bnspike.config import parse_config
from bnspike.dynamics import (
    DirectionalStats,
    GDConfig,
    Trajectory,
    TrajectoryRecord,
    classify_edges,
    trajectory_to_csv,
    trajectory_to_json,
)
from bnspike.errors import ConfigError, TrajectoryError

WHITENED_BASE = """
schema_version = 1
seed = 5

[dataset]
kind = "hilbert"
n = 8
d = 12
noise_std = 1e-2
whiten = true

[init]
kind = "ratio"
ratio = 0.01
k = 0.08

[gd]
eta = %s
eta_alpha = 0.2
max_iters = 400
loss = "square"
mode = "vector"
eta_scale = "window_relative"
"""

DELAYED = parse_config(WHITENED_BASE % "0.5")
NO_RISE = parse_config(
    (WHITENED_BASE % "0.3").replace('eta_scale = "window_relative"', "")
    .replace("eta = 0.3", "eta = 0.001")
    .replace("max_iters = 400", "max_iters = 200")
)


def synthetic_risk_traj(risks, ratios=None):
    """Trajectory whose edges come from the given ratio series (defaults to
    the risk series itself, so risk and ratio move together)."""
    if ratios is None:
        ratios = risks
    records = []
    for t, (risk, r) in enumerate(zip(risks, ratios)):
        stats = DirectionalStats(
            rho=1.0,
            rho_perp=r,
            ratio=r,
            rho_perp_sigma=r,
            alpha=0.5,
            w_norm=1.0,
            w_sigma_norm=1.0,
            eff_lr_euclid=0.1,
            eff_lr_sigma=0.1,
            risk=risk,
        )
        records.append(TrajectoryRecord(t=t, stats=stats))
    classify_edges(records)
    gd = GDConfig(eta=0.1, eta_alpha=0.1, max_iters=len(risks) - 1, loss="square", mode="vector")
    return Trajectory(records=records, config=gd, dataset_hash="x", hat_norm=1.0)


class TestSummarizeSpike:
    def test_monotone_run_reports_unit_ratio_and_no_peak(self):
        traj = synthetic_risk_traj([1.0, 0.8, 0.6, 0.5, 0.45])
        s = runner.summarize_spike(traj)
        assert s.spike_ratio == 1.0
        assert s.recovery_time is None
        assert s.peak_risk == s.trough_risk_before
        assert s.t_descent_end == len(traj.records) - 1

    def test_spike_fields(self):
        risks = [1.0, 0.6, 0.4, 0.9, 1.4, 0.7, 0.39, 0.2]
        traj = synthetic_risk_traj(risks)
        s = runner.summarize_spike(traj)
        assert s.t_descent_end == 2
        assert s.trough_risk_before == 0.4
        assert s.peak_risk == 1.4
        np.testing.assert_allclose(s.spike_ratio, 1.4 / 0.4)
        assert s.recovery_time == 6  # first t past the peak with risk <= 1.01 * trough

    def test_invariants_on_simulated_runs(self):
        for cfg in (DELAYED, NO_RISE):
            s = runner.simulate(cfg).summary
            assert s.peak_risk >= s.trough_risk_before
            assert s.spike_ratio >= 1.0

    def test_no_rise_regime_is_monotone(self):
        sim = runner.simulate(NO_RISE)
        assert all(rec.edge != "rising" for rec in sim.trajectory.records)
        assert sim.summary.spike_ratio == 1.0


class TestTrajectoryRoundTrip:
    def test_csv_preserves_stats_and_edges(self):
        sim = runner.simulate(DELAYED)
        text = trajectory_to_csv(sim.trajectory)
        back = runner.trajectory_from_csv(
            text, sim.trajectory.config, hat_norm=sim.trajectory.hat_norm
        )
        for col in ("rho", "ratio", "alpha", "w_norm", "risk", "eff_lr_euclid"):
            np.testing.assert_allclose(back.column(col), sim.trajectory.column(col), rtol=1e-15)
        assert [r.edge for r in back.records] == [r.edge for r in sim.trajectory.records]

    def test_json_preserves_stats_and_nan_ratio(self):
        sim = runner.simulate(DELAYED)
        text = trajectory_to_json(sim.trajectory)
        back = runner.trajectory_from_json(text)
        np.testing.assert_allclose(back.column("risk"), sim.trajectory.column("risk"))
        assert back.hat_norm == sim.trajectory.hat_norm

    def test_csv_header_error_names_line_one(self):
        with pytest.raises(TrajectoryError, match="line 1"):
            runner.trajectory_from_csv(
                "bogus,header\n", DELAYED.gd, hat_norm=1.0
            )

    def test_csv_bad_row_names_its_line(self):
        sim = runner.simulate(DELAYED)
        lines = trajectory_to_csv(sim.trajectory).splitlines()
        lines[3] = lines[3].replace(",", ";", 2)
        with pytest.raises(TrajectoryError, match="line 4"):
            runner.trajectory_from_csv(
                "\n".join(lines) + "\n", sim.trajectory.config, hat_norm=1.0
            )

    def test_json_error_carries_line_number(self):
        with pytest.raises(TrajectoryError, match="line 3"):
            runner.trajectory_from_json('{\n"records": [\n!!\n]}')


class TestSimulateArtifacts:
    def test_identical_bytes_on_repeat(self, tmp_path):
        a = runner.simulate(DELAYED, out_dir=tmp_path / "a")
        b = runner.simulate(DELAYED, out_dir=tmp_path / "b")
        for name in ("trajectory.csv", "trajectory.json", "summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_meta_records_run_provenance(self):
        sim = runner.simulate(DELAYED)
        meta = sim.trajectory.meta
        assert meta["seed"] == 5
        assert meta["dataset"] == "hilbert"
        assert meta["reference"] == "LS"
        assert meta["eta_scale"] == "window_relative"

    def test_sharpness_snapshots_written_when_enabled(self, tmp_path):
        cfg = parse_config((WHITENED_BASE % "0.5") + "\n[analysis]\nsharpness = true\n")
        sim = runner.simulate(cfg, out_dir=tmp_path)
        lines = (tmp_path / "sharpness.csv").read_text().splitlines()
        assert lines[0] == "t,sharpness,converged"
        assert len(lines) == len(sim.sharpness) + 1


class TestVerify:
    def test_delayed_onset_all_applicable_pass(self):
        board = runner.verify(DELAYED)
        verdicts = {c.name: c.verdict for c in board.clauses}
        assert verdicts["onset_window"] == "Pass"
        assert verdicts["edge_length"] == "Pass"
        assert verdicts["shape_bound"] == "Pass"
        assert verdicts["falling_edge"] == "Pass"
        assert board.exit_status == 0

    def test_no_rise_regime_passes_its_clause(self):
        board = runner.verify(NO_RISE)
        verdicts = {c.name: c.verdict for c in board.clauses}
        assert verdicts["no_rising_edge"] == "Pass"
        assert verdicts["onset_window"] == "NotApplicable"
        assert board.exit_status == 0

    def test_wrong_loss_marks_suite_not_applicable(self):
        cfg = parse_config(
            (WHITENED_BASE % "0.5").replace('loss = "square"', 'loss = "logistic"')
            + "\n[analysis]\nlinear = true\nlogistic = false\n"
        )
        board = runner.verify(cfg)
        assert [c.verdict for c in board.clauses] == ["NotApplicable"]
        assert board.exit_status == 0

    def test_tampered_ratio_column_fails_shape_bound(self):
        sim = runner.simulate(DELAYED)
        text = trajectory_to_csv(sim.trajectory)
        header, *rows = text.splitlines()
        cols = header.split(",")
        i_ratio = cols.index("ratio")
        i_edge = cols.index("edge")
        # inflate the ratio at one step inside the first rising run
        rising = [j for j, row in enumerate(rows) if row.split(",")[i_edge] == "rising"]
        target = rising[len(rising) // 2]
        parts = rows[target].split(",")
        parts[i_ratio] = "%.17g" % (float(parts[i_ratio]) * 50.0)
        rows[target] = ",".join(parts)
        tampered = runner.trajectory_from_csv(
            "\n".join([header] + rows) + "\n",
            sim.trajectory.config,
            hat_norm=sim.trajectory.hat_norm,
        )
        board = runner.verify(DELAYED, traj=tampered)
        verdicts = {c.name: c.verdict for c in board.clauses}
        assert verdicts["shape_bound"] == "Fail"
        assert board.exit_status == 1

    def test_scoreboard_render_marks(self):
        board = runner.verify(DELAYED)
        table = board.render()
        assert "✓" in table and "onset_window" in table
        assert table.strip().endswith("all applicable clauses pass")

    def test_scoreboard_json_written(self, tmp_path):
        runner.verify(DELAYED, out_dir=tmp_path)
        doc = json.loads((tmp_path / "scoreboard.json").read_text())
        assert doc["kind"] == "scoreboard"
        assert doc["exit_status"] == 0


class TestSweep:
    def test_single_cell_degenerates_to_simulate_plus_verify(self, tmp_path):
        cfg = parse_config((WHITENED_BASE % "0.5") + "\n[sweep]\nseed = [5]\n")
        summary = runner.sweep(cfg, out_dir=tmp_path)
        assert summary["cell_count"] == 1
        cell_dir = tmp_path / "cells" / "cell_0000"
        direct = runner.simulate(DELAYED, out_dir=tmp_path / "direct")
        assert (cell_dir / "trajectory.csv").read_bytes() == (
            tmp_path / "direct" / "trajectory.csv"
        ).read_bytes()
        board = runner.verify(DELAYED)
        cell = summary["cells"][0]
        assert cell["clauses"] == {c.name: c.verdict for c in board.clauses}

    def test_summary_bytes_identical_across_thread_counts(self, tmp_path):
        cfg = parse_config((WHITENED_BASE % "0.5") + "\n[sweep]\nseed = [5, 6, 7]\neta = [0.3, 0.6]\n")
        runner.sweep(cfg, out_dir=tmp_path / "t1", threads=1)
        runner.sweep(cfg, out_dir=tmp_path / "t4", threads=4)
        assert (tmp_path / "t1" / "sweep.json").read_bytes() == (
            tmp_path / "t4" / "sweep.json"
        ).read_bytes()

    def test_cell_error_recorded_without_stopping(self, tmp_path):
        # noise_std = 0 makes the whitened 8x12 instance rank-deficient enough
        # to be rejected, so that cell errors while the other survives
        cfg = parse_config((WHITENED_BASE % "0.5") + "\n[sweep]\nnoise_std = [0.0, 0.01]\n")
        summary = runner.sweep(cfg, out_dir=tmp_path)
        assert summary["errors"] == 1
        statuses = [c["status"] for c in summary["cells"]]
        assert statuses.count("ok") == 1 and statuses.count("error") == 1

    def test_sweep_requires_grid(self):
        with pytest.raises(ConfigError, match="sweep"):
            runner.sweep_cells(DELAYED)

    def test_aggregate_counts_match_cells(self):
        cfg = parse_config((WHITENED_BASE % "0.5") + "\n[sweep]\nseed = [5, 6]\n")
        summary = runner.sweep(cfg)
        for name, counts in summary["aggregate"].items():
            total = counts["Pass"] + counts["Fail"] + counts["NotApplicable"]
            assert total == 2, name


class TestThreadCount:
    def test_env_cap_respected(self, monkeypatch):
        monkeypatch.setenv("BNSPIKE_THREADS", "2")
        assert runner.thread_count(100) == 2
        assert runner.thread_count(1) == 1

    def test_bad_env_values_rejected(self, monkeypatch):
        monkeypatch.setenv("BNSPIKE_THREADS", "many")
        with pytest.raises(ConfigError, match="BNSPIKE_THREADS"):
            runner.thread_count(4)
        monkeypatch.setenv("BNSPIKE_THREADS", "0")
        with pytest.raises(ConfigError, match="BNSPIKE_THREADS"):
            runner.thread_count(4)
