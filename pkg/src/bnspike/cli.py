"""Command-line front end.

Subcommands: simulate, verify, plot, sweep, gen-data, constants. Every run
is fully determined by (config, seed); artifacts are files and exit codes.
Exit status 0/1 encodes the verify scoreboard so CI can gate on it; 2 means
the invocation itself failed (bad config, unreadable file).
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import runner, svgplot
from .config import RunConfig, apply_overrides, load_config
from .data import dataset_hash, dataset_to_csv, dataset_to_json
from .dynamics import MODES
from .errors import (
    AssumptionViolationError,
    BnSpikeError,
    ConvergenceError,
    SubspaceEmptyError,
)
from .logistic_theory import constants_from_state, margin_offset
from .model import LOSS_KINDS


def _friendly(fn):
    """Map library errors to an error line on stderr and exit status 2."""

    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except BnSpikeError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapped


def _common(fn):
    fn = click.option("--mode", type=click.Choice(list(MODES)), default=None,
                      help="Override gd.mode.")(fn)
    fn = click.option("--loss", type=click.Choice(list(LOSS_KINDS)), default=None,
                      help="Override gd.loss (refreshes analysis defaults).")(fn)
    fn = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                      help="Override the config seed.")(fn)
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True, dir_okay=False),
                      help="TOML run configuration.")(fn)
    return fn


def _load(config_path, seed, loss, mode) -> RunConfig:
    cfg = load_config(config_path)
    return apply_overrides(cfg, seed=seed, loss=loss, mode=mode)


def _warn_separability(cfg: RunConfig, separable) -> None:
    if cfg.gd.loss != "logistic":
        return
    if separable is False:
        click.echo(
            "warning: dataset is not separable; the logistic analysis "
            "assumes a hard-margin solution exists",
            err=True,
        )
    elif separable is None:
        click.echo("warning: separability check did not converge", err=True)


@click.group()
def main() -> None:
    """Deterministic experiments on scale-invariant linear models."""


@main.command()
@_common
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for trajectory/summary artifacts.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="json",
              help="Stdout format when --out is not given.")
@_friendly
def simulate(config_path, seed, loss, mode, out, fmt):
    """Run one trajectory; write artifacts or print to stdout."""
    cfg = _load(config_path, seed, loss, mode)
    sim = runner.simulate(cfg, out_dir=out)
    _warn_separability(cfg, sim.separable)
    if out is None:
        if fmt == "csv":
            from .dynamics import trajectory_to_csv

            click.echo(trajectory_to_csv(sim.trajectory), nl=False)
        else:
            click.echo(json.dumps(sim.summary.to_dict(), sort_keys=True, indent=2))
    else:
        for name in sorted(sim.files):
            click.echo(f"wrote {sim.files[name]}")
        click.echo(
            f"spike_ratio {sim.summary.spike_ratio:.6g} "
            f"(descent ends at t={sim.summary.t_descent_end})"
        )


@main.command()
@_common
@click.option("--trajectory", "traj_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Adjudicate a stored trajectory instead of a fresh run.")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for scoreboard.json.")
@_friendly
def verify(config_path, seed, loss, mode, traj_path, out):
    """Adjudicate theorem clauses; exit 1 iff an applicable clause fails."""
    cfg = _load(config_path, seed, loss, mode)
    traj = None
    if traj_path is not None:
        ctx = runner.materialize(cfg)
        traj = runner.load_trajectory(
            traj_path,
            ctx.gd,
            hat_norm=float(np.linalg.norm(ctx.ref.w_hat)),
            ds_hash=dataset_hash(ctx.ds),
        )
    board = runner.verify(cfg, traj=traj, out_dir=out)
    click.echo(board.render(), nl=False)
    sys.exit(board.exit_status)


@main.command()
@click.argument("trajectory", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Required for CSV trajectories (rebuilds step config).")
@click.option("--sharpness", "sharp_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Overlay sharpness snapshots (CSV from simulate).")
@click.option("--log-risk", is_flag=True, help="Log-scale y-axis on the risk panel.")
@click.option("--out", type=click.Path(file_okay=False), default=".",
              help="Directory for plot.svg and plotdata.csv.")
@_friendly
def plot(trajectory, config_path, sharp_path, log_risk, out):
    """Render the three aligned panels for a stored trajectory."""
    text = Path(trajectory).read_text()
    if text.lstrip().startswith("{"):
        traj = runner.trajectory_from_json(text)
    else:
        if config_path is None:
            raise click.UsageError("CSV trajectories need --config to rebuild the step config")
        cfg = load_config(config_path)
        ctx = runner.materialize(cfg)
        traj = runner.trajectory_from_csv(
            text,
            ctx.gd,
            hat_norm=float(np.linalg.norm(ctx.ref.w_hat)),
            ds_hash=dataset_hash(ctx.ds),
        )
    sharp = None
    if sharp_path is not None:
        sharp = svgplot.sharpness_from_csv(Path(sharp_path).read_text())
    paths = svgplot.write_plot(traj, out, log_risk=log_risk, sharpness=sharp)
    for name in sorted(paths):
        click.echo(f"wrote {paths[name]}")


@main.command()
@_common
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for sweep.json and per-cell artifacts.")
@_friendly
def sweep(config_path, seed, loss, mode, out):
    """Run every cell of the config's [sweep] grid and aggregate verdicts."""
    cfg = _load(config_path, seed, loss, mode)
    summary = runner.sweep(cfg, out_dir=out)
    click.echo(
        f"{summary['cell_count']} cells, {summary['errors']} errors"
    )
    for name, counts in sorted(summary["aggregate"].items()):
        rate = counts["pass_rate"]
        rate_s = "n/a" if rate is None else f"{rate:.3f}"
        click.echo(
            f"  {name}: pass {counts['Pass']}, fail {counts['Fail']}, "
            f"na {counts['NotApplicable']} (pass rate {rate_s})"
        )


@main.command("gen-data")
@_common
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for the dataset file.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="json",
              help="Serialization format.")
@_friendly
def gen_data(config_path, seed, loss, mode, out, fmt):
    """Generate the config's dataset and serialize it."""
    cfg = _load(config_path, seed, loss, mode)
    ds = runner.build_dataset(cfg)
    text = dataset_to_csv(ds) if fmt == "csv" else dataset_to_json(ds)
    if out is None:
        click.echo(text, nl=False)
    else:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"dataset.{fmt}"
        path.write_text(text)
        click.echo(f"wrote {path} (hash {dataset_hash(ds)})")


@main.command()
@_common
@click.option("--skip-margin-offset", is_flag=True,
              help="Skip the margin-offset search (it dominates runtime).")
@_friendly
def constants(config_path, seed, loss, mode, skip_margin_offset):
    """Print every derived constant of the small-ratio analysis as JSON."""
    cfg = _load(config_path, seed, loss, mode)
    ctx = runner.materialize(cfg)
    b = None
    if not skip_margin_offset:
        try:
            b = margin_offset(ctx.ds, ctx.ref)
        except (SubspaceEmptyError, AssumptionViolationError, ConvergenceError) as exc:
            click.echo(f"warning: margin offset unavailable ({exc})", err=True)
    consts = constants_from_state(
        ctx.ds, ctx.ref, ctx.state0, eta=ctx.gd.eta, eta_alpha=ctx.gd.eta_alpha,
        margin_offset_b=b,
    )
    click.echo(json.dumps(consts.to_dict(), sort_keys=True, indent=2))


if __name__ == "__main__":
    main()
