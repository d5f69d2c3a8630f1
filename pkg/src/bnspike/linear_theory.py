"""Predictive analysis of the whitened square-loss dynamics: one-step
direction conditions, the delayed-onset window and waiting time, the
stabilization bound with its two square-root shape envelopes, and the
falling-edge certificate.

All predictions are made from the trajectory's own recorded statistics and
then compared against what the trajectory actually did, so every report pairs
a computed constant with an observed event where one exists.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .dynamics import Trajectory
from .errors import PreconditionError, TrajectoryError
from .model import ModelState, gradients

CONDITION_NO_RISE = "NoRisingEdge"
CONDITION_DELAYED = "DelayedOnset"
CONDITION_INDETERMINATE = "Indeterminate"

RATIO_PRECONDITION = 1.0 / math.sqrt(3.0)

# Shape-bound checks tolerate this much float accumulation before a step is
# reported as violating the envelope.
SHAPE_SLACK = 1e-9


@dataclass(frozen=True)
class DirectionStepReport:
    """One-step convergence/divergence conditions for any scale-invariant loss.

    A condition flag is None when its preconditions do not hold; it is never
    reported False merely because it was inapplicable.
    """

    converge_holds: bool | None
    converge_lhs: float
    converge_rhs: float
    diverge_holds: bool | None
    diverge_lhs: float
    diverge_rhs: float
    rho: float
    ratio: float
    grad_norm: float


def direction_step_conditions(
    state: ModelState,
    ds: Dataset,
    w_hat: np.ndarray,
    kind: str,
    eta: float,
    grad: np.ndarray | None = None,
) -> DirectionStepReport:
    """Evaluate both one-step direction conditions at the given state.

    ``grad`` overrides the weight gradient; pass it when the caller already
    holds the exact value (an analytically-zero gradient recomputed here would
    carry float residue of either sign).
    """
    gw = gradients(state, ds, kind)[0] if grad is None else np.asarray(grad, dtype=float)
    w_norm = float(np.linalg.norm(state.w))
    rho = float(w_hat @ state.w) / w_norm
    rho_perp = float(np.linalg.norm(w_hat - rho * state.w / w_norm))
    ratio = rho_perp / rho if rho > 0.0 else float("nan")
    gn_sq = float(gw @ gw)
    gn = math.sqrt(gn_sq)

    converge_lhs = eta * rho / w_norm * gn_sq
    converge_rhs = -2.0 * float(w_hat @ gw)
    converge_holds = (converge_lhs <= converge_rhs) if rho > 0.0 else None

    diverge_lhs = eta * gn / w_norm
    if rho > 0.0 and 0.0 < ratio <= 1.0 and state.alpha > 0.0:
        denom = rho * rho - rho_perp * rho_perp
        diverge_rhs = math.inf if denom == 0.0 else 2.0 * rho * rho_perp / denom
        diverge_holds = diverge_lhs >= diverge_rhs
    else:
        diverge_rhs = float("nan")
        diverge_holds = None

    return DirectionStepReport(
        converge_holds=converge_holds,
        converge_lhs=converge_lhs,
        converge_rhs=converge_rhs,
        diverge_holds=diverge_holds,
        diverge_lhs=diverge_lhs,
        diverge_rhs=diverge_rhs,
        rho=rho,
        ratio=ratio,
        grad_norm=gn,
    )


def first_edge(traj: Trajectory, kind: str, start: int = 0) -> int | None:
    """Index of the first record at or after ``start`` whose step has the
    given edge label, or None."""
    for rec in traj.records[start:]:
        if rec.edge == kind:
            return rec.t
    return None


@dataclass(frozen=True)
class OnsetReport:
    """Step-size regime classification and the predicted onset delay.

    ``condition`` uses the stated admission constant ``c_t0``;
    ``sharp_condition`` uses the tighter constant the delay derivation
    actually supports, which unlike the stated one can open a nonempty
    window (``window_empty`` records that the stated one cannot).
    """

    t0: int
    k_t0: float
    ratio_t0: float
    c_t0: float
    c_t0_sharp: float
    delta_t0: int
    no_rise_threshold: float
    onset_lower_threshold: float
    eta_over_w_sq: float
    condition: str
    sharp_condition: str
    window_empty: bool
    log_arg: float
    delta_t0_clamped: bool
    precondition_violation: str | None
    observed_t1: int | None
    onset_within_bound: bool | None


def _classify(eta_over_w_sq, no_rise, lower, upper):
    if eta_over_w_sq < no_rise:
        return CONDITION_NO_RISE
    if not math.isnan(upper) and lower < eta_over_w_sq <= upper:
        return CONDITION_DELAYED
    return CONDITION_INDETERMINATE


def window_step_size(
    ratio: float,
    k: float,
    eta_alpha: float,
    frac: float = 0.5,
    hat_norm: float = 1.0,
    w_norm: float = 1.0,
) -> float:
    """Step size a fraction ``frac`` of the way into the delayed-onset window
    that the waiting-time derivation supports for this starting geometry.

    Raises PreconditionError when that window is closed (too much initial
    misalignment, or a scale fraction outside (0, 1)).
    """
    if not 0.0 < k < 1.0:
        raise PreconditionError(f"scale fraction k={k} outside (0, 1)")
    if not ratio > 0.0:
        raise PreconditionError("initial misalignment ratio must be positive")
    rho = hat_norm / math.sqrt(1.0 + ratio * ratio)
    alpha = k * rho
    tight = (eta_alpha / (math.exp(1.0 + eta_alpha) * (1.0 - k))) / (16.0 * hat_norm**2)
    right = min(1.0 / (alpha * rho), tight / (ratio * ratio))
    left = 8.0 / hat_norm**2
    if not right > left:
        raise PreconditionError(
            f"delayed-onset window is closed for ratio={ratio:.4g}, k={k:.4g}, "
            f"eta_alpha={eta_alpha:.4g} (upper {right:.4g} <= lower {left:.4g})"
        )
    return (left + frac * (right - left)) * w_norm**2


def onset_analysis(traj: Trajectory, t0: int = 0) -> OnsetReport:
    """Classify the step-size regime at ``t0`` and predict the onset delay.

    Valid for square-loss trajectories on whitened data. The waiting-time
    formula is evaluated in double precision and floored; a log argument at or
    below 1 clamps the prediction to a single step, with a warning, since the
    derivation implicitly assumes the argument exceeds 1.
    """
    if traj.config.loss != "square":
        raise TrajectoryError("onset analysis is defined for square-loss trajectories only")
    stats = traj.records[t0].stats
    hn = traj.hat_norm
    eta = traj.config.eta
    eta_alpha = traj.config.eta_alpha
    rho, rho_perp, ratio, alpha = stats.rho, stats.rho_perp, stats.ratio, stats.alpha
    w_sq = stats.w_norm**2

    violation = None
    if not rho > 0.0:
        violation = "alignment is not positive (rho <= 0)"
    elif ratio > RATIO_PRECONDITION:
        violation = f"misalignment ratio {ratio:.6g} exceeds 1/sqrt(3)"
    elif not 0.0 < alpha < rho:
        violation = f"scale alpha={alpha:.6g} outside (0, rho={rho:.6g})"
    elif not 0.0 < eta_alpha < 1.0:
        violation = f"scale step eta_alpha={eta_alpha} outside (0, 1)"

    k = alpha / rho if rho > 0.0 else float("nan")
    no_rise = 2.0 / hn**2
    lower = 8.0 / hn**2
    eta_over_w_sq = eta / w_sq

    if 0.0 < k < 1.0:
        inv_branch = 1.0 / (alpha * rho)
        c_t0 = min(inv_branch, (3.0 / (16.0 * hn**2)) * eta_alpha / (math.e**2 * (1.0 - k)))
        if ratio > 0.0:
            c_sharp = min(
                inv_branch,
                (eta_alpha / (math.exp(1.0 + eta_alpha) * (1.0 - k))) / (16.0 * hn**2) / ratio**2,
            )
        else:
            c_sharp = float("nan")
    else:
        c_t0 = float("nan")
        c_sharp = float("nan")

    window_empty = math.isnan(c_t0) or c_t0 <= lower

    if violation is None and eta > 0.0 and ratio > 0.0 and 0.0 < k < 1.0:
        log_arg = eta_alpha * (1.0 - k) * w_sq / (4.0 * eta * hn**2 * ratio**2)
        if log_arg <= 1.0:
            warnings.warn(
                f"waiting-time log argument {log_arg:.4g} <= 1; clamping predicted delay to 1",
                stacklevel=2,
            )
            delta_t0 = 1
            clamped = True
        else:
            delta_t0 = int(math.floor(math.log(log_arg) / eta_alpha + 1.0))
            clamped = False
    else:
        log_arg = float("nan")
        delta_t0 = 0
        clamped = False

    if violation is not None:
        condition = CONDITION_INDETERMINATE
        sharp_condition = CONDITION_INDETERMINATE
    else:
        condition = _classify(eta_over_w_sq, no_rise, lower, c_t0)
        sharp_condition = _classify(eta_over_w_sq, no_rise, lower, c_sharp)

    observed_t1 = first_edge(traj, "rising", start=t0)
    within = None if observed_t1 is None else (observed_t1 <= t0 + delta_t0)

    return OnsetReport(
        t0=t0,
        k_t0=k,
        ratio_t0=ratio,
        c_t0=c_t0,
        c_t0_sharp=c_sharp,
        delta_t0=delta_t0,
        no_rise_threshold=no_rise,
        onset_lower_threshold=lower,
        eta_over_w_sq=eta_over_w_sq,
        condition=condition,
        sharp_condition=sharp_condition,
        window_empty=window_empty,
        log_arg=log_arg,
        delta_t0_clamped=clamped,
        precondition_violation=violation,
        observed_t1=observed_t1,
        onset_within_bound=within,
    )


@dataclass(frozen=True)
class StabilizationReport:
    """Predicted maximum length of a rising edge and its shape envelopes.

    ``phi`` is the catch-up time of the scale variable within the edge (None
    if it never catches up before the edge ends). Violations list tuples of
    (t, envelope value for ratio^2, observed ratio^2).
    """

    t1: int
    delta_t1: int
    phi: int | None
    observed_t2: int | None
    shape_bound_violations: list[tuple[int, float, float]]
    degenerate: bool
    peak_ratio: float


def stabilization_analysis(traj: Trajectory, t1: int | None = None) -> StabilizationReport:
    if t1 is None:
        t1 = first_edge(traj, "rising")
        if t1 is None:
            raise TrajectoryError(
                "no rising segment in this trajectory; run the onset analysis first "
                "to confirm the step size admits one"
            )
    stats1 = traj.records[t1].stats
    hn = traj.hat_norm
    rho1, perp1, alpha1 = stats1.rho, stats1.rho_perp, stats1.alpha
    if perp1 <= 0.0 or rho1 <= 0.0:
        raise TrajectoryError(f"degenerate start at t={t1}: need positive rho and rho_perp")

    degenerate = perp1 == rho1
    term1 = math.ceil(0.25 * (hn**4 / alpha1**2) * (1.0 / perp1**2 - 1.0 / rho1**2) ** 2)
    term2 = math.ceil(0.25 * (hn**2 / rho1**2) * (rho1 / perp1 - perp1 / rho1) ** 2)
    delta_t1 = term1 + term2

    observed_t2 = first_edge(traj, "falling", start=t1)

    phi = None
    if observed_t2 is not None:
        for rec in traj.records[t1 : observed_t2 + 1]:
            if rec.stats.alpha >= rec.stats.rho:
                phi = rec.t
                break

    violations: list[tuple[int, float, float]] = []
    if observed_t2 is not None:
        pre_rate = 2.0 * perp1 * alpha1 / hn**2
        post_rate = 2.0 * perp1 / hn
        split = phi if phi is not None else observed_t2
        for rec in traj.records[t1 : observed_t2 + 1]:
            r_sq = rec.stats.ratio**2
            if rec.t <= split:
                bound = 1.0 - pre_rate * math.sqrt(rec.t - t1)
            else:
                bound = 1.0 - post_rate * math.sqrt(rec.t - split)
            if r_sq > bound + SHAPE_SLACK:
                violations.append((rec.t, bound, r_sq))

    end = observed_t2 if observed_t2 is not None else len(traj.records) - 1
    peak = max(rec.stats.ratio for rec in traj.records[t1 : end + 1])

    return StabilizationReport(
        t1=t1,
        delta_t1=delta_t1,
        phi=phi,
        observed_t2=observed_t2,
        shape_bound_violations=violations,
        degenerate=degenerate,
        peak_ratio=peak,
    )


@dataclass(frozen=True)
class FallingEdgeCertificate:
    """Witness that the effective rate eventually drops below the rise
    threshold, ending the spike."""

    status: str  # "precondition-not-met" | "found" | "not-found-within-horizon"
    found_t: int | None
    eff_lr_start: float
    threshold_start: float
    horizon: int


def _rise_threshold(ratio: float) -> float:
    denom = 1.0 - ratio * ratio
    if denom == 0.0:
        return math.inf
    return 2.0 / denom


def falling_edge_monitor(traj: Trajectory, start: int = 0) -> FallingEdgeCertificate:
    """Scan for the first step whose effective rate is under the rise
    threshold, given that the starting step is over it."""
    s0 = traj.records[start].stats
    thr0 = _rise_threshold(s0.ratio)
    horizon = traj.records[-1].t
    if not s0.eff_lr_euclid > thr0:
        return FallingEdgeCertificate(
            status="precondition-not-met",
            found_t=None,
            eff_lr_start=s0.eff_lr_euclid,
            threshold_start=thr0,
            horizon=horizon,
        )
    for rec in traj.records[start:]:
        if rec.stats.eff_lr_euclid < _rise_threshold(rec.stats.ratio):
            return FallingEdgeCertificate(
                status="found",
                found_t=rec.t,
                eff_lr_start=s0.eff_lr_euclid,
                threshold_start=thr0,
                horizon=horizon,
            )
    return FallingEdgeCertificate(
        status="not-found-within-horizon",
        found_t=None,
        eff_lr_start=s0.eff_lr_euclid,
        threshold_start=thr0,
        horizon=horizon,
    )
