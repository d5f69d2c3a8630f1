"""Experiment orchestration behind the CLI.

Materializes a RunConfig into concrete objects (dataset, reference
direction, initial state, resolved step size), runs and summarizes
trajectories, adjudicates theorem clauses into a scoreboard, and drives
sweep grids. Everything here is deterministic given the config.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig, set_axis
from .data import (
    Dataset,
    dataset_from_csv,
    dataset_from_json,
    dataset_hash,
    gen_active_margin_dataset,
    gen_hilbert_dataset,
    spectrum_bounds,
    whiten,
)
from .dynamics import (
    CSV_COLUMNS,
    DirectionalStats,
    GDConfig,
    Trajectory,
    TrajectoryRecord,
    aligned_initial_state,
    run_trajectory,
    top_hessian_eigenvalue,
    trajectory_to_csv,
    trajectory_to_json,
)
from .errors import (
    AssumptionViolationError,
    BnSpikeError,
    ConfigError,
    ConvergenceError,
    PreconditionError,
    SeparabilityError,
    SubspaceEmptyError,
    TrajectoryError,
)
from .linear_theory import (
    CONDITION_DELAYED,
    CONDITION_NO_RISE,
    falling_edge_monitor,
    first_edge,
    onset_analysis,
    stabilization_analysis,
    window_step_size,
)
from .logistic_theory import (
    CampaignReport,
    ReferenceDirection,
    clause_verdicts,
    constants_from_state,
    least_squares_reference,
    margin_offset,
    small_ratio_campaign,
    solve_svm,
)
from .model import ModelState

SCHEMA_VERSION = 1

CAMPAIGN_CLAUSES = (
    "small_ratio_reached",
    "high_ratio_contraction",
    "rising_exit",
    "alpha_corridor",
)

EDGE_LABELS = (None, "rising", "falling", "flat")


# ---------------------------------------------------------------------------
# materialization


@dataclass(frozen=True)
class RunContext:
    """A config resolved into the objects a run actually needs."""

    config: RunConfig
    ds: Dataset
    ref: ReferenceDirection
    state0: ModelState
    gd: GDConfig  # eta resolved to an absolute step size


def build_dataset(cfg: RunConfig) -> Dataset:
    spec = cfg.dataset
    if spec.kind == "hilbert":
        ds = gen_hilbert_dataset(
            spec.n,
            spec.d,
            seed=cfg.seed,
            noise_std=spec.noise_std,
            rotate=spec.rotate,
            row_offset=spec.row_offset,
            col_offset=spec.col_offset,
        )
    elif spec.kind == "active_margin":
        ds = gen_active_margin_dataset(spec.n, spec.d, gamma_target=spec.gamma, seed=cfg.seed)
    else:
        text = Path(spec.path).read_text()
        ds = dataset_from_json(text) if text.lstrip().startswith("{") else dataset_from_csv(text)
    return whiten(ds) if spec.whiten else ds


def build_reference(ds: Dataset, cfg: RunConfig) -> ReferenceDirection:
    choice = cfg.init.reference
    if choice == "auto":
        choice = "least_squares" if cfg.gd.loss == "square" else "svm"
    return least_squares_reference(ds) if choice == "least_squares" else solve_svm(ds)


def build_state(ds: Dataset, ref: ReferenceDirection, cfg: RunConfig) -> ModelState:
    init = cfg.init
    if init.kind == "ratio":
        return aligned_initial_state(
            ds, ref.w_hat, ratio=init.ratio, k=init.k, w_norm=init.w_norm, seed=cfg.seed
        )
    rng = np.random.default_rng(cfg.seed)
    v = rng.standard_normal(ds.d)
    return ModelState(init.w_norm * v / np.linalg.norm(v), init.alpha0)


def materialize(cfg: RunConfig) -> RunContext:
    ds = build_dataset(cfg)
    ref = build_reference(ds, cfg)
    state0 = build_state(ds, ref, cfg)
    gd = cfg.gd
    if cfg.eta_scale == "window_relative":
        eta = window_step_size(
            cfg.init.ratio,
            cfg.init.k,
            gd.eta_alpha,
            frac=gd.eta,
            hat_norm=float(np.linalg.norm(ref.w_hat)),
            w_norm=cfg.init.w_norm,
        )
        gd = replace(gd, eta=eta)
    return RunContext(config=cfg, ds=ds, ref=ref, state0=state0, gd=gd)


def _is_separable(ds: Dataset) -> bool | None:
    """True/False when the SVM settles it, None when it times out."""
    try:
        solve_svm(ds, tol=1e-6, max_iters=20_000)
    except SeparabilityError:
        return False
    except ConvergenceError:
        return None
    return True


# ---------------------------------------------------------------------------
# spike summary


@dataclass(frozen=True)
class SpikeSummary:
    """Coarse description of the first loss spike along a trajectory.

    The trough is the lowest risk seen up to the first rising step, the peak
    the highest risk inside that rising segment; recovery is the first later
    step whose risk is back within 1% of the trough. A run with no rising
    step has spike_ratio 1 and no peak of its own.
    """

    t_descent_end: int
    peak_risk: float
    trough_risk_before: float
    recovery_time: int | None
    spike_ratio: float

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "spike_summary",
            "t_descent_end": self.t_descent_end,
            "peak_risk": self.peak_risk,
            "trough_risk_before": self.trough_risk_before,
            "recovery_time": self.recovery_time,
            "spike_ratio": self.spike_ratio,
        }


def summarize_spike(traj: Trajectory) -> SpikeSummary:
    risks = [rec.stats.risk for rec in traj.records]
    t1 = first_edge(traj, "rising")
    if t1 is None:
        trough = min(risks)
        return SpikeSummary(
            t_descent_end=traj.records[-1].t,
            peak_risk=trough,
            trough_risk_before=trough,
            recovery_time=None,
            spike_ratio=1.0,
        )
    trough = min(risks[: t1 + 1])
    seg_end = t1
    while seg_end < len(risks) - 1 and traj.records[seg_end].edge == "rising":
        seg_end += 1
    segment = risks[t1 : seg_end + 1]
    peak = max(segment)
    peak_t = t1 + segment.index(peak)
    recovery = None
    for t in range(peak_t + 1, len(risks)):
        if risks[t] <= trough * 1.01:
            recovery = t
            break
    if trough > 0.0:
        ratio = peak / trough
    else:
        ratio = 1.0 if peak == trough else math.inf
    return SpikeSummary(
        t_descent_end=t1,
        peak_risk=peak,
        trough_risk_before=trough,
        recovery_time=recovery,
        spike_ratio=ratio,
    )


# ---------------------------------------------------------------------------
# trajectory files


def trajectory_from_csv(
    text: str, gd: GDConfig, hat_norm: float, ds_hash: str = ""
) -> Trajectory:
    """Rebuild a trajectory from its CSV export.

    The CSV carries only the per-step columns, so run-level fields (config,
    reference norm) come from the caller, and the two Sigma-norm statistics
    that are not exported are backfilled as nan.
    """
    lines = text.splitlines()
    header = ",".join(CSV_COLUMNS)
    if not lines or lines[0].strip() != header:
        raise TrajectoryError(f"line 1: expected header {header!r}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(CSV_COLUMNS):
            raise TrajectoryError(
                f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(parts)}"
            )
        try:
            t = int(parts[0])
            vals = [float(p) for p in parts[1:9]]
        except ValueError as exc:
            raise TrajectoryError(f"line {lineno}: {exc}") from None
        edge = parts[9].strip() or None
        if edge not in EDGE_LABELS:
            raise TrajectoryError(f"line {lineno}: unknown edge label {edge!r}")
        stats = DirectionalStats(
            rho=vals[0],
            rho_perp=vals[1],
            ratio=vals[2],
            rho_perp_sigma=math.nan,
            alpha=vals[3],
            w_norm=vals[4],
            w_sigma_norm=math.nan,
            eff_lr_euclid=vals[5],
            eff_lr_sigma=vals[6],
            risk=vals[7],
        )
        records.append(TrajectoryRecord(t=t, stats=stats, edge=edge))
    if not records:
        raise TrajectoryError("no records found")
    return Trajectory(
        records=records, config=gd, dataset_hash=ds_hash, hat_norm=hat_norm
    )


def trajectory_from_json(text: str) -> Trajectory:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TrajectoryError(f"line {exc.lineno}: {exc.msg}") from None
    if doc.get("kind") != "trajectory":
        raise TrajectoryError("not a trajectory document (kind != 'trajectory')")
    gd = GDConfig(**doc["config"])
    records = []
    for i, rec in enumerate(doc["records"]):
        ratio = rec["ratio"]
        stats = DirectionalStats(
            rho=rec["rho"],
            rho_perp=rec["rho_perp"],
            ratio=math.nan if ratio is None else ratio,
            rho_perp_sigma=math.nan,
            alpha=rec["alpha"],
            w_norm=rec["w_norm"],
            w_sigma_norm=math.nan,
            eff_lr_euclid=rec["eff_lr_euclid"],
            eff_lr_sigma=rec["eff_lr_sigma"],
            risk=rec["risk"],
        )
        edge = rec["edge"]
        if edge not in EDGE_LABELS:
            raise TrajectoryError(f"record {i}: unknown edge label {edge!r}")
        records.append(TrajectoryRecord(t=rec["t"], stats=stats, edge=edge))
    if not records:
        raise TrajectoryError("no records found")
    return Trajectory(
        records=records,
        config=gd,
        dataset_hash=doc.get("dataset_hash", ""),
        hat_norm=doc["hat_norm"],
        ties=list(doc.get("ties", [])),
        meta=doc.get("meta", {}),
    )


def load_trajectory(path, gd: GDConfig, hat_norm: float, ds_hash: str = "") -> Trajectory:
    text = Path(path).read_text()
    if str(path).endswith(".json") or text.lstrip().startswith("{"):
        return trajectory_from_json(text)
    return trajectory_from_csv(text, gd, hat_norm, ds_hash)


# ---------------------------------------------------------------------------
# simulate


@dataclass(frozen=True)
class SimulationResult:
    trajectory: Trajectory
    summary: SpikeSummary
    sharpness: tuple[tuple[int, float, bool], ...] | None
    separable: bool | None
    files: dict[str, str]


def _write(out_dir: Path, name: str, text: str, files: dict) -> None:
    path = out_dir / name
    path.write_text(text)
    files[name] = str(path)


def simulate(cfg: RunConfig, out_dir=None, ctx: RunContext | None = None) -> SimulationResult:
    if ctx is None:
        ctx = materialize(cfg)
    separable = True if ctx.ref.kind == "SVM" else _is_separable(ctx.ds)
    meta = {
        "seed": cfg.seed,
        "dataset": cfg.dataset.kind,
        "reference": ctx.ref.kind,
        "eta_scale": cfg.eta_scale,
        "separable": separable,
    }
    traj = run_trajectory(ctx.ds, ctx.ref.w_hat, ctx.state0, ctx.gd, meta=meta)
    summary = summarize_spike(traj)
    sharp = None
    if cfg.analysis.sharpness:
        rows = []
        for rec in traj.records:
            if rec.snapshot is not None:
                est = top_hessian_eigenvalue(rec.snapshot, ctx.ds, ctx.gd.loss)
                rows.append((rec.t, est.value, est.converged))
        sharp = tuple(rows)

    files: dict[str, str] = {}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write(out_dir, "trajectory.csv", trajectory_to_csv(traj), files)
        _write(out_dir, "trajectory.json", trajectory_to_json(traj), files)
        _write(
            out_dir,
            "summary.json",
            json.dumps(summary.to_dict(), sort_keys=True, indent=2) + "\n",
            files,
        )
        if sharp is not None:
            buf = "t,sharpness,converged\n" + "".join(
                f"{t},{v:.17g},{int(c)}\n" for t, v, c in sharp
            )
            _write(out_dir, "sharpness.csv", buf, files)
    return SimulationResult(
        trajectory=traj, summary=summary, sharpness=sharp, separable=separable, files=files
    )


# ---------------------------------------------------------------------------
# verify


@dataclass(frozen=True)
class ClauseResult:
    suite: str
    name: str
    verdict: str  # "Pass" | "Fail" | "NotApplicable"
    measured: float | None
    predicted: float | None
    detail: str

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "name": self.name,
            "verdict": self.verdict,
            "measured": self.measured,
            "predicted": self.predicted,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class Scoreboard:
    clauses: tuple[ClauseResult, ...]
    dataset_hash: str
    campaign: dict | None = None

    @property
    def failures(self) -> int:
        return sum(1 for c in self.clauses if c.verdict == "Fail")

    @property
    def exit_status(self) -> int:
        return 1 if self.failures else 0

    def to_dict(self) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "scoreboard",
            "dataset_hash": self.dataset_hash,
            "clauses": [c.to_dict() for c in self.clauses],
            "failures": self.failures,
            "exit_status": self.exit_status,
        }
        if self.campaign is not None:
            doc["campaign"] = self.campaign
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def render(self) -> str:
        marks = {"Pass": "✓", "Fail": "✗", "NotApplicable": "-"}
        lines = [
            f"{'':2}{'clause':<24} {'suite':<9} {'verdict':<14} {'measured':>12} {'predicted':>12}"
        ]
        for c in self.clauses:
            meas = "" if c.measured is None else f"{c.measured:.6g}"
            pred = "" if c.predicted is None else f"{c.predicted:.6g}"
            lines.append(
                f"{marks[c.verdict]:2}{c.name:<24} {c.suite:<9} {c.verdict:<14} {meas:>12} {pred:>12}"
            )
            if c.verdict != "Pass" and c.detail:
                lines.append(f"    {c.detail}")
        if self.failures:
            lines.append(f"{self.failures} applicable clause(s) failed")
        else:
            lines.append("all applicable clauses pass")
        return "\n".join(lines) + "\n"


def _na(suite, name, detail, predicted=None):
    return ClauseResult(suite, name, "NotApplicable", None, predicted, detail)


def _linear_clauses(traj: Trajectory) -> list[ClauseResult]:
    try:
        onset = onset_analysis(traj)
    except (PreconditionError, TrajectoryError) as exc:
        return [_na("linear", name, str(exc)) for name in ("no_rising_edge", "onset_window")]

    out = []
    t_rise = first_edge(traj, "rising")
    horizon = traj.records[-1].t

    # The stated admission constant provably opens no window (onset.window_empty
    # is True for every valid input), so regime classification runs against the
    # sharp constant the delay derivation actually supports.
    regime = onset.sharp_condition

    if regime == CONDITION_NO_RISE:
        verdict = "Pass" if t_rise is None else "Fail"
        detail = (
            "no rising step anywhere on the trajectory"
            if t_rise is None
            else f"rising step at t={t_rise} despite eta/||w||^2 below the threshold"
        )
        out.append(
            ClauseResult(
                "linear",
                "no_rising_edge",
                verdict,
                onset.eta_over_w_sq,
                onset.no_rise_threshold,
                detail,
            )
        )
    else:
        out.append(
            _na(
                "linear",
                "no_rising_edge",
                f"step-size regime is {regime}, not {CONDITION_NO_RISE}",
                onset.no_rise_threshold,
            )
        )

    if onset.precondition_violation is not None:
        out.append(_na("linear", "onset_window", onset.precondition_violation))
    elif regime != CONDITION_DELAYED:
        out.append(_na("linear", "onset_window", f"step-size regime is {regime}"))
    elif onset.observed_t1 is not None:
        bound = onset.t0 + onset.delta_t0
        verdict = "Pass" if onset.onset_within_bound else "Fail"
        out.append(
            ClauseResult(
                "linear",
                "onset_window",
                verdict,
                float(onset.observed_t1),
                float(bound),
                f"first rising step at t={onset.observed_t1}, bound t0+delta={bound}",
            )
        )
    elif horizon >= onset.t0 + onset.delta_t0:
        out.append(
            ClauseResult(
                "linear",
                "onset_window",
                "Fail",
                None,
                float(onset.t0 + onset.delta_t0),
                "no rising step although the run extends past the predicted window",
            )
        )
    else:
        out.append(
            _na(
                "linear",
                "onset_window",
                f"run ends at t={horizon}, before the predicted window closes",
                float(onset.t0 + onset.delta_t0),
            )
        )

    if t_rise is None:
        reason = "no rising segment to measure"
        out.append(_na("linear", "edge_length", reason))
        out.append(_na("linear", "shape_bound", reason))
        out.append(_na("linear", "falling_edge", reason))
        return out

    stab = stabilization_analysis(traj, t1=t_rise)
    if stab.observed_t2 is not None:
        length = stab.observed_t2 - stab.t1
        out.append(
            ClauseResult(
                "linear",
                "edge_length",
                "Pass" if length <= stab.delta_t1 else "Fail",
                float(length),
                float(stab.delta_t1),
                f"rising segment [{stab.t1}, {stab.observed_t2}]",
            )
        )
        nviol = len(stab.shape_bound_violations)
        detail = (
            "ratio^2 stayed under the envelope on the whole edge"
            if nviol == 0
            else f"{nviol} step(s) above the envelope, first at t={stab.shape_bound_violations[0][0]}"
        )
        out.append(
            ClauseResult(
                "linear",
                "shape_bound",
                "Pass" if nviol == 0 else "Fail",
                float(nviol),
                0.0,
                detail,
            )
        )
    elif horizon >= stab.t1 + stab.delta_t1:
        out.append(
            ClauseResult(
                "linear",
                "edge_length",
                "Fail",
                float(horizon - stab.t1),
                float(stab.delta_t1),
                "edge still rising past the predicted maximum length",
            )
        )
        out.append(_na("linear", "shape_bound", "edge never closed; envelope undefined"))
    else:
        reason = f"edge still open at the run horizon t={horizon}"
        out.append(_na("linear", "edge_length", reason, float(stab.delta_t1)))
        out.append(_na("linear", "shape_bound", reason))

    cert = falling_edge_monitor(traj, start=t_rise)
    if cert.status == "found":
        out.append(
            ClauseResult(
                "linear",
                "falling_edge",
                "Pass",
                float(cert.found_t),
                None,
                f"effective rate back under the rise threshold at t={cert.found_t}",
            )
        )
    elif cert.status == "precondition-not-met":
        out.append(
            _na(
                "linear",
                "falling_edge",
                f"rate {cert.eff_lr_start:.4g} not above the rise threshold "
                f"{cert.threshold_start:.4g} at t={t_rise}",
            )
        )
    else:
        out.append(
            ClauseResult(
                "linear",
                "falling_edge",
                "Fail",
                None,
                None,
                f"no step under the rise threshold before the horizon t={cert.horizon}",
            )
        )
    return out


def _solve_margin_b(ds: Dataset, ref: ReferenceDirection) -> tuple[float | None, str]:
    try:
        return margin_offset(ds, ref), ""
    except (SubspaceEmptyError, AssumptionViolationError, ConvergenceError) as exc:
        return None, str(exc)


def _campaign_clauses(report: CampaignReport) -> list[ClauseResult]:
    predicted = {
        "small_ratio_reached": float(report.constants.t0),
        "high_ratio_contraction": report.constants.theta_down,
        "rising_exit": report.constants.theta_up,
        "alpha_corridor": report.constants.alpha0,
    }
    out = []
    for name in CAMPAIGN_CLAUSES:
        v = report.clauses[name]
        out.append(
            ClauseResult(
                "logistic",
                name,
                v.verdict,
                None if v.first_t is None else float(v.first_t),
                predicted[name],
                v.detail,
            )
        )
    return out


def _campaign_from_file(ctx: RunContext, traj: Trajectory) -> CampaignReport:
    """Mirror of the campaign's window bookkeeping, adjudicated on recorded
    per-step columns instead of a fresh trajectory."""
    cfg = ctx.gd
    if cfg.loss != "logistic":
        raise PreconditionError("the small-ratio campaign requires the logistic loss")
    sb = spectrum_bounds(ctx.ds)
    if sb.lambda_max <= 1.0:
        raise PreconditionError(f"campaign requires lambda_max > 1 (got {sb.lambda_max:.6g})")
    alpha0 = ctx.state0.alpha
    alpha_cap = math.log(sb.lambda_max) / 3.0
    if not 0.0 < alpha0 <= alpha_cap:
        raise PreconditionError(
            f"alpha0={alpha0:.6g} outside (0, log(lambda_max)/3] = (0, {alpha_cap:.6g}]"
        )
    margin_b, _ = _solve_margin_b(ctx.ds, ctx.ref)
    consts = constants_from_state(
        ctx.ds, ctx.ref, ctx.state0, cfg.eta, cfg.eta_alpha, margin_offset_b=margin_b
    )
    w0_sq = consts.w0_norm**2
    eta_low = consts.c_low * ctx.ref.gamma * w0_sq
    eta_high = consts.c_high * w0_sq / ctx.ref.gamma
    truncated = consts.t0 > traj.records[-1].t
    clauses = clause_verdicts(
        traj.column("ratio"),
        traj.column("rho_perp"),
        traj.column("rho"),
        traj.column("alpha"),
        [r.edge for r in traj.records],
        consts,
        truncated=truncated,
    )
    return CampaignReport(
        status="Satisfiable" if eta_low <= eta_high else "Unsatisfiable",
        eta=cfg.eta,
        eta_alpha=cfg.eta_alpha,
        eta_window_low=eta_low,
        eta_window_high=eta_high,
        eta_alpha_bound=consts.c_alpha * w0_sq / (cfg.eta * ctx.ref.gamma),
        window_gap=eta_low / eta_high if eta_high > 0.0 else math.inf,
        horizon=traj.records[-1].t,
        truncated=truncated,
        observed=True,
        constants=consts,
        clauses=clauses,
    )


def _logistic_clauses(
    ctx: RunContext, traj: Trajectory | None
) -> tuple[list[ClauseResult], dict | None]:
    try:
        if traj is not None:
            report = _campaign_from_file(ctx, traj)
        else:
            margin_b, _ = _solve_margin_b(ctx.ds, ctx.ref)
            report = small_ratio_campaign(
                ctx.ds,
                ctx.state0,
                ctx.gd,
                ref=ctx.ref,
                margin_b=margin_b,
                force_run=ctx.config.analysis.campaign_force_run,
            )
    except PreconditionError as exc:
        return [_na("logistic", name, str(exc)) for name in CAMPAIGN_CLAUSES], None
    return _campaign_clauses(report), report.to_dict()


def verify(cfg: RunConfig, traj: Trajectory | None = None, out_dir=None) -> Scoreboard:
    """Adjudicate the configured theorem suites into a scoreboard.

    When ``traj`` is given its recorded columns are checked (replay); when it
    is None the trajectory is run fresh from the config. Exit status is
    nonzero exactly when an applicable clause fails.
    """
    ctx = materialize(cfg)
    clauses: list[ClauseResult] = []
    campaign = None

    if cfg.analysis.linear:
        if cfg.gd.loss != "square":
            clauses.append(_na("linear", "suite", "linear suite needs the square loss"))
        else:
            lin_traj = traj
            if lin_traj is None:
                lin_traj = run_trajectory(ctx.ds, ctx.ref.w_hat, ctx.state0, ctx.gd)
            clauses.extend(_linear_clauses(lin_traj))

    if cfg.analysis.logistic:
        if cfg.gd.loss != "logistic":
            clauses.append(_na("logistic", "suite", "logistic suite needs the logistic loss"))
        else:
            lg_clauses, campaign = _logistic_clauses(ctx, traj)
            clauses.extend(lg_clauses)

    board = Scoreboard(
        clauses=tuple(clauses), dataset_hash=dataset_hash(ctx.ds), campaign=campaign
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "scoreboard.json").write_text(board.to_json())
    return board


# ---------------------------------------------------------------------------
# sweep


def thread_count(cells: int) -> int:
    env = os.environ.get("BNSPIKE_THREADS", "").strip()
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"BNSPIKE_THREADS must be an integer, got {env!r}") from None
        if cap < 1:
            raise ConfigError(f"BNSPIKE_THREADS must be positive, got {cap}")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, cells))


def sweep_cells(cfg: RunConfig) -> list[dict]:
    if not cfg.sweep:
        raise ConfigError("sweep: config has no [sweep] table")
    axes = sorted(cfg.sweep)
    grids = [cfg.sweep[a] for a in axes]
    return [dict(zip(axes, combo)) for combo in itertools.product(*grids)]


def _run_cell(cfg: RunConfig, index: int, params: dict, out_dir) -> dict:
    cell_cfg = replace(cfg, sweep=None)
    for axis, value in params.items():
        cell_cfg = set_axis(cell_cfg, axis, value)
    cell_dir = None if out_dir is None else Path(out_dir) / "cells" / f"cell_{index:04d}"
    entry: dict = {"cell": index, "params": params}
    try:
        sim = simulate(cell_cfg, out_dir=cell_dir)
        board = verify(cell_cfg, traj=sim.trajectory, out_dir=cell_dir)
    except BnSpikeError as exc:
        entry.update(status="error", error=str(exc))
        return entry
    entry.update(
        status="ok",
        spike_ratio=sim.summary.spike_ratio,
        rising_steps=sum(1 for r in sim.trajectory.records if r.edge == "rising"),
        clauses={c.name: c.verdict for c in board.clauses},
        failures=board.failures,
    )
    return entry


def sweep(cfg: RunConfig, out_dir=None, threads: int | None = None) -> dict:
    """Run the config's sweep grid cell by cell and aggregate clause verdicts.

    Cells are independent; they run on a thread pool capped by
    BNSPIKE_THREADS and are merged in index order, so the summary is
    byte-identical across thread counts. Individual cell errors are recorded
    and do not stop the sweep.
    """
    cells = sweep_cells(cfg)
    if threads is None:
        threads = thread_count(len(cells))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(_run_cell, cfg, i, params, out_dir) for i, params in enumerate(cells)
        ]
        results = [f.result() for f in futures]

    aggregate: dict[str, dict[str, int]] = {}
    for entry in results:
        for name, verdict in entry.get("clauses", {}).items():
            counts = aggregate.setdefault(
                name, {"Pass": 0, "Fail": 0, "NotApplicable": 0}
            )
            counts[verdict] += 1
    for counts in aggregate.values():
        adjudicated = counts["Pass"] + counts["Fail"]
        counts["pass_rate"] = counts["Pass"] / adjudicated if adjudicated else None

    summary = {
        "schema_version": SCHEMA_VERSION,
        "kind": "sweep",
        "axes": {k: list(v) for k, v in sorted(cfg.sweep.items())},
        "cell_count": len(cells),
        "errors": sum(1 for e in results if e["status"] == "error"),
        "cells": results,
        "aggregate": aggregate,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "sweep.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary
