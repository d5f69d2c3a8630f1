"""Max-margin reference directions, data-dependent constants, bound ledgers,
and the small-ratio entry campaign for the logistic loss.

The reference direction ``w_hat`` is either the hard-margin SVM solution
(computed here by a projected-gradient dual ascent) or the least-squares
direction ``pinv(Sigma) mu``.  Everything downstream measures the gradient
flow against that fixed direction: risk upper/lower bounds, a ledger of
alignment and gradient-norm inequalities, per-state exit thresholds, and a
campaign that checks the small-ratio entry clauses along a trajectory.

All constants are pure functions of a small set of scalars, so reports can be
serialized and recomputed bitwise.
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

from .data import Dataset, sigma_inner, sigma_norm, spectrum_bounds
from .dynamics import (
    EDGE_RISING,
    DirectionalStats,
    GDConfig,
    directional_stats,
    run_trajectory,
)
from .errors import (
    AssumptionViolationError,
    ConvergenceError,
    PreconditionError,
    SeparabilityError,
    SubspaceEmptyError,
)
from .model import ModelState, grad_w, loss_deriv, loss_value

REFERENCE_KINDS = ("LeastSquares", "SVM")

SLACK_TOL = 1e-9
PERP_STEP_TOL = 1e-12
CORRIDOR_TOL = 1e-12

__all__ = [
    "REFERENCE_KINDS",
    "ReferenceDirection",
    "least_squares_reference",
    "solve_svm",
    "margin_offset",
    "LogisticConstants",
    "logistic_constants",
    "constants_from_state",
    "initial_sigma_misalignment",
    "RiskBoundReport",
    "logistic_risk_bounds",
    "BoundEntry",
    "BoundLedger",
    "alignment_bound_ledger",
    "ExitThresholdReport",
    "stability_exit_thresholds",
    "ClauseVerdict",
    "clause_verdicts",
    "CampaignReport",
    "small_ratio_campaign",
    "campaign_to_json",
]


@dataclasses.dataclass(frozen=True)
class ReferenceDirection:
    """A fixed direction the trajectory is measured against.

    ``gamma`` is 1/||w_hat||; ``dual_coeffs`` carries the nonnegative dual
    weights when the direction came from the SVM solver, else None.
    """

    w_hat: np.ndarray
    gamma: float
    dual_coeffs: np.ndarray | None
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in REFERENCE_KINDS:
            raise ValueError(f"unknown reference kind {self.kind!r}")
        object.__setattr__(self, "w_hat", np.asarray(self.w_hat, dtype=float))
        if self.dual_coeffs is not None:
            object.__setattr__(
                self, "dual_coeffs", np.asarray(self.dual_coeffs, dtype=float)
            )


def least_squares_reference(ds: Dataset) -> ReferenceDirection:
    """pinv(Sigma) mu; on whitened data this is the sign-adjusted mean.

    The pseudoinverse cutoff matches the whitening clamp (1e-12): with the
    numpy default (1e-15) a rank-deficient Sigma can keep near-null
    eigenvalues, and inverting those injects a spurious out-of-span
    component into the reference direction.
    """
    w_hat = np.linalg.pinv(np.asarray(ds.Sigma), hermitian=True, rcond=1e-12) @ np.asarray(ds.mu)
    nrm = float(np.linalg.norm(w_hat))
    if nrm == 0.0:
        raise PreconditionError("least-squares direction vanishes (zero adjusted mean)")
    return ReferenceDirection(w_hat, 1.0 / nrm, None, "LeastSquares")


def solve_svm(ds: Dataset, tol: float = 1e-8, max_iters: int = 100_000) -> ReferenceDirection:
    """Hard-margin SVM via projected gradient ascent on the dual.

    Maximizes sum(beta) - 0.5 beta' G beta over beta >= 0 with
    G = Xtilde' Xtilde.  Steps are Polyak-style (gap to the best primal
    upper bound known so far) capped by the exact Cauchy step, which keeps
    the iteration monotone and finite on these tiny desk-scale instances.
    """
    Xt = np.asarray(ds.Xtilde, dtype=float)
    gram = Xt.T @ Xt
    diag_max = max(1.0, float(gram.diagonal().max()))
    beta = np.zeros(ds.n)
    best_upper = math.inf
    resid = math.inf
    for _ in range(max_iters):
        margins = gram @ beta
        resid = max(
            float(np.maximum(0.0, 1.0 - margins).max()),
            float(np.abs(beta * (margins - 1.0)).max()),
        )
        if resid < tol:
            w_hat = Xt @ beta
            return ReferenceDirection(
                w_hat, 1.0 / float(np.linalg.norm(w_hat)), beta.copy(), "SVM"
            )
        obj = float(beta.sum() - 0.5 * beta @ margins)
        if obj > 1e10 or float(np.linalg.norm(beta)) > 1e8:
            raise SeparabilityError(
                f"hard-margin dual diverged (objective {obj:.3e}); "
                "the dataset is not linearly separable"
            )
        mmin = float(margins.min())
        if mmin > 0.0:
            # rescaling w = Xt beta / mmin is primal feasible, so its squared
            # norm over two upper-bounds the dual optimum (weak duality)
            best_upper = min(best_upper, 0.5 * float(beta @ margins) / mmin**2)
        grad = 1.0 - margins
        pg = np.where((beta > 0.0) | (grad > 0.0), grad, 0.0)
        pg2 = float(pg @ pg)
        if pg2 == 0.0:
            break
        gq = float(pg @ gram @ pg)
        if gq <= pg2 * 1e-14 * diag_max:
            # zero curvature along an ascent direction: the dual is unbounded
            raise SeparabilityError(
                "hard-margin dual is unbounded along a flat ascent direction; "
                "the dataset is not linearly separable"
            )
        step = pg2 / gq
        if best_upper < math.inf and best_upper > obj:
            step = min(step, (best_upper - obj) / pg2)
        beta = np.maximum(0.0, beta + step * pg)
    raise ConvergenceError("hard-margin dual solver exceeded its iteration cap", residual=resid)


def _subspace_margins(ds: Dataset, ref: ReferenceDirection) -> np.ndarray:
    """Rows of y_i x_i' B for an orthonormal basis B of span(X) minus w_hat."""
    Xt = np.asarray(ds.Xtilde, dtype=float)
    u, s, _ = np.linalg.svd(Xt, full_matrices=False)
    rank = int((s > s[0] * 1e-12).sum()) if s.size else 0
    if rank < 2:
        raise SubspaceEmptyError(
            "span(X) minus the reference direction has dimension zero; "
            "the margin offset is not applicable"
        )
    U = u[:, :rank]
    v = U.T @ ref.w_hat
    v = v / np.linalg.norm(v)
    q, _ = np.linalg.qr(np.column_stack([v, np.eye(rank)]))
    return Xt.T @ (U @ q[:, 1:])


def _equal_margin_candidates(M: np.ndarray, c: np.ndarray, value: float):
    """Polish step: solve the equal-margin KKT system on active sets read off
    the incumbent, keeping whichever candidate improves the minimum margin."""
    margins = M @ c
    mmin = float(margins.min())
    scale = 1.0 + abs(mmin)
    for width in (1e-8, 1e-5, 1e-2):
        active = np.flatnonzero(margins <= mmin + width * scale)
        sub = M[active]
        gram = sub @ sub.T
        try:
            mu = np.linalg.solve(gram, np.ones(len(active)))
        except np.linalg.LinAlgError:
            continue
        direction = sub.T @ mu
        nrm = float(np.linalg.norm(direction))
        if nrm < 1e-14:
            continue
        direction = direction / nrm
        for cand in (direction, -direction):
            v = float((M @ cand).min())
            if v > value:
                c, value, margins, mmin = cand, v, M @ cand, v
    return c, value


def margin_offset(
    ds: Dataset,
    ref: ReferenceDirection,
    restarts: int = 32,
    iters: int = 5000,
    seed: int = 0,
) -> float:
    """The positive offset b with -b = max over unit directions in
    span(X) orthogonal to w_hat of the minimum signed margin.

    Subgradient ascent on the unit sphere with 1/sqrt(k) steps, restarted
    from 32 random directions; each restart finishes with an equal-margin
    polish so the best two values agree to far better than the required 1e-4.
    """
    M = _subspace_margins(ds, ref)
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(restarts):
        c = rng.normal(size=M.shape[1])
        c /= np.linalg.norm(c)
        for k in range(1, iters + 1):
            row = int(np.argmin(M @ c))
            c = c + M[row] / math.sqrt(k)
            nrm = float(np.linalg.norm(c))
            if nrm > 0.0:
                c /= nrm
        _, value = _equal_margin_candidates(M, c, float((M @ c).min()))
        values.append(value)
    values.sort(reverse=True)
    if values[0] - values[1] > 1e-4:
        raise ConvergenceError(
            "margin-offset restarts disagree", residual=values[0] - values[1]
        )
    # a reference direction known only to ~1e-8 can turn an exactly-zero best
    # margin slightly negative, so the violation cutoff scales with the data
    cutoff = max(1e-10, 1e-7 * float(np.abs(M).max()))
    if values[0] >= -cutoff:
        raise AssumptionViolationError(
            "a direction orthogonal to the reference attains (near-)nonnegative "
            f"margins (best {values[0]:.3e}); the dual-weight assumption fails"
        )
    return -values[0]


@dataclasses.dataclass(frozen=True)
class LogisticConstants:
    """Every derived constant of the logistic small-ratio analysis, together
    with the scalar inputs it was computed from (so reports round-trip)."""

    alpha0: float
    gamma: float
    lambda_min: float
    lambda_max: float
    w0_norm: float
    rho0_perp_sigma: float
    eta: float
    eta_alpha: float
    margin_offset_b: float | None
    c0: float
    c_statement: float
    c_proof: float
    c1: float
    c2_statement: float
    c2_proof: float
    c3: float
    c_tilde: float
    c4: float
    c5: float
    c6: float
    tan_min_sq: float
    phi_coefficient: float
    t0: int
    theta_down: float
    theta_up: float
    c_low: float
    c_high: float
    c_alpha: float

    def to_dict(self) -> dict:
        inputs = (
            "alpha0",
            "gamma",
            "lambda_min",
            "lambda_max",
            "w0_norm",
            "rho0_perp_sigma",
            "eta",
            "eta_alpha",
            "margin_offset_b",
        )
        out = {"inputs": {k: getattr(self, k) for k in inputs}, "derived": {}}
        for field in dataclasses.fields(self):
            if field.name not in inputs:
                out["derived"][field.name] = getattr(self, field.name)
        return out


def logistic_constants(
    alpha0: float,
    gamma: float,
    lambda_min: float,
    lambda_max: float,
    w0_norm: float,
    rho0_perp_sigma: float,
    eta: float,
    eta_alpha: float,
    margin_offset_b: float | None = None,
) -> LogisticConstants:
    """Assemble the constants package from its scalar inputs.

    Two constants appear in both a statement form and a proof form; the
    chained proof forms are canonical for everything derived downstream, and
    both are reported.  A perfectly aligned start (rho0_perp_sigma = 0) sends
    c1 to infinity, which simply makes the step-size window unsatisfiable.
    """
    kappa = lambda_max / lambda_min
    c0 = math.sqrt(kappa) + 2.0 * math.sqrt(2.0) * kappa
    c_statement = 32.0 * math.sqrt(kappa) * math.exp(1.5 * alpha0) / alpha0
    c_proof = (32.0 / alpha0) * kappa
    rs2 = rho0_perp_sigma**2
    mis_term = 36.0 * kappa**2 * math.exp(2.0 * alpha0) / rs2 if rs2 > 0.0 else math.inf
    c1 = 2.0 * c_proof * (1.0 + mis_term)
    c2_statement = 2.0 * c_statement * alpha0**2 * kappa**1.5
    c2_proof = 2.0 * c_proof * alpha0**2 * kappa
    c3 = alpha0 / (2.0 * c2_proof)
    c_tilde = (3.0 / 256.0) * alpha0 / kappa
    c4 = 2.0 / c_tilde
    c5 = math.sqrt((c_tilde / 2.0) / (36.0 * c2_proof * alpha0**2 * kappa**3))
    c6 = (6.0 * kappa**2.5 * alpha0 * math.exp(1.5 * alpha0) * (1.5 * alpha0 + 1.0) ** 2) ** 2
    tan_min_sq = gamma**2 * lambda_min / (8.0 * lambda_max**2)
    phi = 6.0 * kappa**2 * alpha0 * eta * gamma / w0_norm**2
    t0 = math.ceil(c2_proof * (1.0 + 1.0 / tan_min_sq) * eta * gamma / w0_norm**2)
    theta_down = 4.0 / (math.sqrt(phi**2 + 4.0) - phi) ** 2 - 1.0
    theta_up = c6 * eta**2 / (w0_norm**4 * gamma**2) - 1.0
    kappa_sq = kappa**2
    return LogisticConstants(
        alpha0=alpha0,
        gamma=gamma,
        lambda_min=lambda_min,
        lambda_max=lambda_max,
        w0_norm=w0_norm,
        rho0_perp_sigma=rho0_perp_sigma,
        eta=eta,
        eta_alpha=eta_alpha,
        margin_offset_b=margin_offset_b,
        c0=c0,
        c_statement=c_statement,
        c_proof=c_proof,
        c1=c1,
        c2_statement=c2_statement,
        c2_proof=c2_proof,
        c3=c3,
        c_tilde=c_tilde,
        c4=c4,
        c5=c5,
        c6=c6,
        tan_min_sq=tan_min_sq,
        phi_coefficient=phi,
        t0=t0,
        theta_down=theta_down,
        theta_up=theta_up,
        c_low=max(c1 * 16.0 * kappa_sq, c4),
        c_high=c5,
        c_alpha=c3 / (16.0 * kappa_sq),
    )


def initial_sigma_misalignment(w0: np.ndarray, ds: Dataset, w_hat: np.ndarray) -> float:
    """Sigma-norm of the reference direction's residual against the initial
    weights, with the projection taken in the Sigma inner product.

    This anchored misalignment is what the constants package consumes; it is
    the same functional form as the per-step rho_perp_sigma in
    DirectionalStats, evaluated once at the initial weights.
    """
    w0 = np.asarray(w0, dtype=float)
    w_hat = np.asarray(w_hat, dtype=float)
    denom = sigma_norm(w0, ds) ** 2
    if denom == 0.0:
        raise PreconditionError("initial weights have zero data-covariance norm")
    coeff = sigma_inner(w0, w_hat, ds) / denom
    return sigma_norm(w_hat - coeff * w0, ds)


def constants_from_state(
    ds: Dataset,
    ref: ReferenceDirection,
    state0: ModelState,
    eta: float,
    eta_alpha: float,
    margin_offset_b: float | None = None,
) -> LogisticConstants:
    sb = spectrum_bounds(ds)
    return logistic_constants(
        alpha0=state0.alpha,
        gamma=ref.gamma,
        lambda_min=sb.lambda_min,
        lambda_max=sb.lambda_max,
        w0_norm=float(np.linalg.norm(state0.w)),
        rho0_perp_sigma=initial_sigma_misalignment(state0.w, ds, ref.w_hat),
        eta=eta,
        eta_alpha=eta_alpha,
        margin_offset_b=margin_offset_b,
    )


def _ell(z: float) -> float:
    return float(loss_value(np.array([z]), "logistic")[0])


@dataclasses.dataclass(frozen=True)
class RiskBoundReport:
    upper: float | None
    lower: float | None
    upper_applicable: bool
    lower_applicable: bool
    upper_reason: str
    lower_reason: str


def logistic_risk_bounds(
    state: ModelState, ds: Dataset, ref: ReferenceDirection, consts: LogisticConstants
) -> RiskBoundReport:
    """Risk bracket from the alignment statistics alone.

    Upper: loss at alpha plus a perturbation term scaled by c0 * gamma *
    rho_perp.  Lower: average loss of the worst logit consistent with the
    margin offset.  Each side carries its own applicability marker.
    """
    stats = directional_stats(state, ds, ref.w_hat, "logistic", 0.0)
    upper = lower = None
    upper_reason = lower_reason = ""
    if stats.rho <= 0.0:
        upper_reason = lower_reason = "negative alignment (rho <= 0)"
    elif stats.alpha <= 0.0:
        upper_reason = lower_reason = "nonpositive alpha"
    else:
        spread = consts.c0 * ref.gamma * stats.rho_perp
        deriv = abs(float(loss_deriv(np.array([(1.0 - spread) * stats.alpha]), "logistic")[0]))
        upper = _ell(stats.alpha) + stats.alpha * deriv * spread
        if consts.margin_offset_b is None:
            lower_reason = "margin offset unavailable"
        else:
            arg = (stats.alpha / math.sqrt(consts.lambda_min)) * (
                stats.rho * ref.gamma**2 - stats.rho_perp * consts.margin_offset_b * ref.gamma
            )
            lower = _ell(arg) / ds.n
    return RiskBoundReport(
        upper=upper,
        lower=lower,
        upper_applicable=upper is not None,
        lower_applicable=lower is not None,
        upper_reason=upper_reason,
        lower_reason=lower_reason,
    )


@dataclasses.dataclass(frozen=True)
class BoundEntry:
    name: str
    lhs: float | None
    rhs: float | None
    slack: float | None
    applicable: bool
    reason: str


@dataclasses.dataclass(frozen=True)
class BoundLedger:
    entries: tuple[BoundEntry, ...]

    @property
    def violations(self) -> list[BoundEntry]:
        return [e for e in self.entries if e.applicable and e.slack < -SLACK_TOL]


def _entry(name: str, lhs: float, rhs: float, slack: float) -> BoundEntry:
    return BoundEntry(name, lhs, rhs, slack, True, "")


def _skipped(name: str, reason: str) -> BoundEntry:
    return BoundEntry(name, None, None, None, False, reason)


def alignment_bound_ledger(
    state: ModelState, ds: Dataset, ref: ReferenceDirection
) -> BoundLedger:
    """Evaluate the alignment and gradient-norm inequalities at one state.

    Deviation entries need rho > 0; the quantitative descent and norm entries
    need alpha > 0; the descent sign holds unconditionally.  Slack is signed
    so that negative-beyond-1e-9 means the inequality failed.
    """
    sb = spectrum_bounds(ds)
    stats = directional_stats(state, ds, ref.w_hat, "logistic", 0.0)
    gw = grad_w(state, ds, "logistic")
    gnorm = float(np.linalg.norm(gw))
    descent = -float(ref.w_hat @ gw)
    gamma = ref.gamma
    alpha = stats.alpha
    entries: list[BoundEntry] = []

    if stats.rho > 0.0:
        target = gamma**2 * stats.w_norm * stats.rho
        lhs = abs(stats.w_sigma_norm - target)
        rhs = (
            2.0
            * math.sqrt(2.0)
            * sb.lambda_max
            * gamma
            * stats.w_norm**2
            / stats.w_sigma_norm
            * stats.rho_perp
        )
        entries.append(_entry("norm_vs_margin_alignment", lhs, rhs, rhs - lhs))
        margins = np.asarray(ds.Xtilde).T @ state.w
        lhs = float(np.abs(margins - target).max())
        rhs = math.sqrt(sb.lambda_max) * gamma * stats.w_norm * stats.rho_perp
        entries.append(_entry("per_sample_logit_deviation", lhs, rhs, rhs - lhs))
    else:
        reason = "negative alignment (rho <= 0)"
        entries.append(_skipped("norm_vs_margin_alignment", reason))
        entries.append(_skipped("per_sample_logit_deviation", reason))

    entries.append(_entry("reference_descent_sign", alpha * descent, 0.0, alpha * descent))

    if alpha > 0.0:
        damped = alpha * math.exp(-alpha) / stats.w_sigma_norm
        entries.append(
            _entry(
                "reference_descent_lower",
                descent,
                sb.lambda_min / 8.0 * damped * stats.rho_perp**2,
                descent - sb.lambda_min / 8.0 * damped * stats.rho_perp**2,
            )
        )
        lower = sb.lambda_min / 4.0 * damped * stats.rho_perp
        entries.append(_entry("grad_norm_lower", gnorm, lower, gnorm - lower))
        mid = math.sqrt(sb.lambda_min) / 4.0 * damped * stats.rho_perp_sigma
        entries.append(_entry("grad_norm_mid", gnorm, mid, gnorm - mid))
        cap = alpha / stats.w_sigma_norm
        upper = cap * max(
            math.sqrt(sb.lambda_max), sb.lambda_max * (alpha + 1.0) * stats.rho_perp
        )
        entries.append(_entry("grad_norm_upper", gnorm, upper, upper - gnorm))
        plain = cap * math.sqrt(sb.lambda_max)
        entries.append(_entry("grad_norm_upper_plain", gnorm, plain, plain - gnorm))
    else:
        reason = "nonpositive alpha"
        for name in (
            "reference_descent_lower",
            "grad_norm_lower",
            "grad_norm_mid",
            "grad_norm_upper",
            "grad_norm_upper_plain",
        ):
            entries.append(_skipped(name, reason))

    return BoundLedger(tuple(entries))


@dataclasses.dataclass(frozen=True)
class ExitThresholdReport:
    applicable: bool
    diverge_criterion_holds: bool | None
    theta_down_reached: bool | None
    theta_up_exceeded: bool | None
    eq3_lhs: float | None
    eq3_rhs: float | None
    ratio_sq: float | None
    reason: str


def stability_exit_thresholds(
    stats: DirectionalStats, consts: LogisticConstants, cfg: GDConfig
) -> ExitThresholdReport:
    """Per-state exit predicates for the small-ratio analysis.

    diverge_criterion_holds compares the damped alignment step against
    2/(1 - ratio^2); theta_down_reached marks the high-ratio contraction
    regime (ratio^2 at or above theta_down); theta_up_exceeded is inclusive
    at the boundary.
    """
    if not stats.rho > 0.0:
        return ExitThresholdReport(
            False, None, None, None, None, None, None, "negative alignment (rho <= 0)"
        )
    ratio_sq = stats.ratio**2
    lhs = (
        consts.lambda_min
        / 4.0
        * (stats.alpha / math.exp(stats.alpha))
        * (cfg.eta * stats.rho / (stats.w_sigma_norm * stats.w_norm))
    )
    rhs = 2.0 / (1.0 - ratio_sq) if ratio_sq < 1.0 else math.inf
    return ExitThresholdReport(
        applicable=True,
        diverge_criterion_holds=bool(lhs >= rhs),
        theta_down_reached=bool(ratio_sq >= consts.theta_down),
        theta_up_exceeded=bool(ratio_sq >= consts.theta_up),
        eq3_lhs=lhs,
        eq3_rhs=rhs,
        ratio_sq=ratio_sq,
        reason="",
    )


@dataclasses.dataclass(frozen=True)
class ClauseVerdict:
    verdict: str
    checked: int
    first_t: int | None
    detail: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def clause_verdicts(
    ratios: np.ndarray,
    rho_perps: np.ndarray,
    rhos: np.ndarray,
    alphas: np.ndarray,
    edges: list[str | None],
    consts: LogisticConstants,
    truncated: bool = False,
) -> dict[str, ClauseVerdict]:
    """Adjudicate the campaign clauses on recorded per-step sequences.

    Index t of ``edges`` labels the step from t to t+1; the final entry is
    None.  ``truncated`` means the observation window ended before the
    predicted horizon, in which case a missing small-ratio entry is
    unadjudicable rather than a failure.
    """
    horizon = len(ratios) - 1
    out: dict[str, ClauseVerdict] = {}

    entry_t = None
    scanned = 0
    for t in range(horizon):
        scanned = t + 1
        if ratios[t] ** 2 <= consts.tan_min_sq:
            entry_t = t
            break
    if entry_t is not None:
        out["small_ratio_reached"] = ClauseVerdict(
            "Pass", scanned, entry_t, f"ratio^2 first at or below tan_min_sq at t={entry_t}"
        )
    elif truncated:
        out["small_ratio_reached"] = ClauseVerdict(
            "NotApplicable", scanned, None, "window truncated before the predicted horizon"
        )
    else:
        out["small_ratio_reached"] = ClauseVerdict(
            "Fail", scanned, None, "no step reached the small-ratio region"
        )

    checked = 0
    verdict, first_t, detail = "NotApplicable", None, "no step entered the high-ratio regime"
    for t in range(horizon):
        r = ratios[t]
        if not (rhos[t] > 0.0) or math.isnan(r) or r**2 < consts.theta_down:
            continue
        checked += 1
        if rho_perps[t + 1] > rho_perps[t] + PERP_STEP_TOL:
            verdict, first_t = "Fail", t
            detail = f"rho_perp grew across step t={t} despite ratio^2 >= theta_down"
            break
    else:
        if checked:
            verdict, detail = "Pass", "rho_perp nonincreasing on every high-ratio step"
    out["high_ratio_contraction"] = ClauseVerdict(verdict, checked, first_t, detail)

    if entry_t is None:
        out["rising_exit"] = ClauseVerdict(
            "NotApplicable", 0, None, "no small-ratio entry observed"
        )
    else:
        checked = skipped = 0
        verdict, first_t, detail = "NotApplicable", None, "no qualifying rising step"
        for t in range(entry_t + 1, horizon):
            r = ratios[t]
            if edges[t] != EDGE_RISING or math.isnan(r) or r**2 < consts.theta_up:
                continue
            successor = edges[t + 1]
            if successor is None:
                skipped += 1
                continue
            checked += 1
            if successor == EDGE_RISING:
                verdict, first_t = "Fail", t
                detail = f"rising step t={t} above theta_up was followed by another rise"
                break
        else:
            if checked:
                verdict = "Pass"
                detail = "every adjudicable rising step above theta_up exited"
            elif skipped:
                detail = "only a trailing rising segment; exit unadjudicable"
        out["rising_exit"] = ClauseVerdict(verdict, checked, first_t, detail)

    lo = consts.alpha0 / 2.0 - CORRIDOR_TOL
    hi = 1.5 * consts.alpha0 + CORRIDOR_TOL
    verdict, first_t, detail = "Pass", None, "alpha stayed within [alpha0/2, 3 alpha0/2]"
    for t in range(horizon):
        if not lo <= alphas[t] <= hi:
            verdict, first_t = "Fail", t
            detail = f"alpha={alphas[t]:.6g} left the corridor at t={t}"
            break
    out["alpha_corridor"] = ClauseVerdict(verdict, horizon, first_t, detail)

    return out


@dataclasses.dataclass(frozen=True)
class CampaignReport:
    status: str
    eta: float
    eta_alpha: float
    eta_window_low: float
    eta_window_high: float
    eta_alpha_bound: float
    window_gap: float
    horizon: int
    truncated: bool
    observed: bool
    constants: LogisticConstants
    clauses: dict[str, ClauseVerdict]

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "eta": self.eta,
            "eta_alpha": self.eta_alpha,
            "eta_window_low": self.eta_window_low,
            "eta_window_high": self.eta_window_high,
            "eta_alpha_bound": self.eta_alpha_bound,
            "window_gap": self.window_gap,
            "horizon": self.horizon,
            "truncated": self.truncated,
            "observed": self.observed,
            "constants": self.constants.to_dict(),
            "clauses": {k: v.to_dict() for k, v in self.clauses.items()},
        }


def campaign_to_json(report: CampaignReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2)


def small_ratio_campaign(
    ds: Dataset,
    state0: ModelState,
    cfg: GDConfig,
    *,
    ref: ReferenceDirection | None = None,
    margin_b: float | None = None,
    force_run: bool = False,
) -> CampaignReport:
    """Check the small-ratio entry theorem's parameter window and, when the
    window is satisfiable (or force_run is set), adjudicate its clauses on a
    horizon-capped trajectory.

    An empty window is a legitimate Unsatisfiable outcome, reported with the
    binding constants rather than raised.  force_run records the clauses
    observationally even when the window is empty.
    """
    if cfg.loss != "logistic":
        raise PreconditionError("the small-ratio campaign requires the logistic loss")
    sb = spectrum_bounds(ds)
    if sb.lambda_max <= 1.0:
        raise PreconditionError(
            f"campaign requires lambda_max > 1 (got {sb.lambda_max:.6g})"
        )
    alpha0 = state0.alpha
    alpha_cap = math.log(sb.lambda_max) / 3.0
    if not 0.0 < alpha0 <= alpha_cap:
        raise PreconditionError(
            f"alpha0={alpha0:.6g} outside (0, log(lambda_max)/3] = (0, {alpha_cap:.6g}]"
        )
    if ref is None:
        ref = solve_svm(ds)
    consts = constants_from_state(
        ds, ref, state0, cfg.eta, cfg.eta_alpha, margin_offset_b=margin_b
    )
    w0_sq = consts.w0_norm**2
    eta_low = consts.c_low * ref.gamma * w0_sq
    eta_high = consts.c_high * w0_sq / ref.gamma
    eta_alpha_bound = consts.c_alpha * w0_sq / (cfg.eta * ref.gamma)
    status = "Satisfiable" if eta_low <= eta_high else "Unsatisfiable"
    run = force_run or status == "Satisfiable"

    horizon = min(consts.t0, cfg.max_iters)
    truncated = consts.t0 > cfg.max_iters
    if run and horizon > 0:
        traj = run_trajectory(
            ds, ref.w_hat, state0, dataclasses.replace(cfg, max_iters=horizon)
        )
        recs = traj.records
        clauses = clause_verdicts(
            np.array([r.stats.ratio for r in recs]),
            np.array([r.stats.rho_perp for r in recs]),
            np.array([r.stats.rho for r in recs]),
            np.array([r.stats.alpha for r in recs]),
            [r.edge for r in recs],
            consts,
            truncated=truncated,
        )
        observed = True
    else:
        reason = (
            "parameter window empty; trajectory not run"
            if not run
            else "zero-length horizon"
        )
        clauses = {
            name: ClauseVerdict("NotApplicable", 0, None, reason)
            for name in (
                "small_ratio_reached",
                "high_ratio_contraction",
                "rising_exit",
                "alpha_corridor",
            )
        }
        observed = False

    return CampaignReport(
        status=status,
        eta=cfg.eta,
        eta_alpha=cfg.eta_alpha,
        eta_window_low=eta_low,
        eta_window_high=eta_high,
        eta_alpha_bound=eta_alpha_bound,
        window_gap=eta_low / eta_high if eta_high > 0.0 else math.inf,
        horizon=horizon,
        truncated=truncated,
        observed=observed,
        constants=consts,
        clauses=clauses,
    )
