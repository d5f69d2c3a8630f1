"""Full-batch gradient descent on the normalized predictor, with per-step
directional statistics, edge classification, a scalar recurrence specialised
to the whitened square loss, and a sharpness probe.

Two execution modes produce the same trajectory schema:

- ``vector``: the honest iteration on ``(w, alpha)`` for either loss;
- ``recurrence``: a closed-form scalar update on ``(rho, rho_perp, alpha,
  ||w||)`` that is exact for the square loss on whitened data while the
  alignment with the reference direction stays positive.

Edge labels describe the step ``t -> t+1``: the misalignment ratio either
rises, falls, or stays flat. Exact float ties are classified flat and their
indices logged, so underflowed ratios cannot masquerade as rising steps.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, dataset_hash
from .errors import BranchError, ConfigError, GenerationError
from .model import LOSS_KINDS, ModelState, gradients, risk

EDGE_RISING = "rising"
EDGE_FALLING = "falling"
EDGE_FLAT = "flat"

MODES = ("vector", "recurrence")

CSV_COLUMNS = (
    "t",
    "rho",
    "rho_perp",
    "ratio",
    "alpha",
    "w_norm",
    "eff_lr_euclid",
    "eff_lr_sigma",
    "risk",
    "edge",
)


@dataclass(frozen=True)
class GDConfig:
    """Step sizes and bookkeeping for a gradient-descent run.

    ``eta`` multiplies the weight gradient; ``eta_alpha`` is the relaxation
    factor of the scale variable (1 snaps alpha onto the current alignment,
    0 freezes it).
    """

    eta: float
    eta_alpha: float
    max_iters: int
    loss: str = "square"
    mode: str = "vector"
    edge_tol: float = 0.0
    snapshot_every: int = 100

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigError(f"eta must be nonnegative, got {self.eta}")
        if not 0.0 <= self.eta_alpha <= 1.0:
            raise ConfigError(f"eta_alpha must lie in [0, 1], got {self.eta_alpha}")
        if self.max_iters < 0:
            raise ConfigError(f"max_iters must be nonnegative, got {self.max_iters}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.edge_tol < 0:
            raise ConfigError("edge_tol must be nonnegative")
        if self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be at least 1")

    def as_dict(self) -> dict:
        return {
            "eta": self.eta,
            "eta_alpha": self.eta_alpha,
            "max_iters": self.max_iters,
            "loss": self.loss,
            "mode": self.mode,
            "edge_tol": self.edge_tol,
            "snapshot_every": self.snapshot_every,
        }


@dataclass(frozen=True)
class DirectionalStats:
    """Per-step observables of a trajectory record.

    ``rho`` is the (unnormalised) projection of the reference direction onto
    the unit weight vector, ``rho_perp`` the remaining length, and ``ratio``
    their quotient, the tangent of the misalignment angle (nan once the
    alignment is non-positive). The two effective rates differ on purpose:
    the Euclidean one includes the step size, the Sigma one does not.
    """

    rho: float
    rho_perp: float
    ratio: float
    rho_perp_sigma: float
    alpha: float
    w_norm: float
    w_sigma_norm: float
    eff_lr_euclid: float
    eff_lr_sigma: float
    risk: float


@dataclass
class TrajectoryRecord:
    t: int
    stats: DirectionalStats
    edge: str | None = None
    snapshot: ModelState | None = None


@dataclass
class Trajectory:
    records: list[TrajectoryRecord]
    config: GDConfig
    dataset_hash: str
    hat_norm: float
    ties: list[int] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r.stats, name) for r in self.records])


def directional_stats(
    state: ModelState, ds: Dataset, w_hat: np.ndarray, kind: str, eta: float
) -> DirectionalStats:
    w = state.w
    w_norm = float(np.linalg.norm(w))
    sw = ds.Sigma @ w
    w_sigma_norm = float(np.sqrt(max(w @ sw, 0.0)))
    rho = float(w_hat @ w) / w_norm
    resid = w_hat - rho * w / w_norm
    rho_perp = float(np.linalg.norm(resid))
    ratio = rho_perp / rho if rho > 0.0 else float("nan")
    if w_sigma_norm > 0.0:
        # residual of w_hat against w in the Sigma inner product; the
        # projection coefficient is Sigma-based, so this vanishes at alignment
        resid_sigma = w_hat - (float(w_hat @ sw) / w_sigma_norm**2) * w
        rho_perp_sigma = float(np.sqrt(max(resid_sigma @ ds.Sigma @ resid_sigma, 0.0)))
        eff_lr_sigma = state.alpha * rho / w_sigma_norm**2
    else:
        rho_perp_sigma = float("nan")
        eff_lr_sigma = float("nan")
    return DirectionalStats(
        rho=rho,
        rho_perp=rho_perp,
        ratio=ratio,
        rho_perp_sigma=rho_perp_sigma,
        alpha=state.alpha,
        w_norm=w_norm,
        w_sigma_norm=w_sigma_norm,
        eff_lr_euclid=eta * state.alpha * rho / w_norm**2,
        eff_lr_sigma=eff_lr_sigma,
        risk=risk(state, ds, kind),
    )


def aligned_initial_state(
    ds: Dataset,
    w_hat: np.ndarray,
    *,
    ratio: float,
    k: float,
    w_norm: float,
    seed: int,
) -> ModelState:
    """Initial state at a prescribed misalignment ratio and scale fraction.

    The weight vector is placed inside span(X) at angle ``arctan(ratio)`` from
    the reference direction (the in-plane perpendicular is drawn at random),
    and ``alpha`` is set to ``k`` times the resulting alignment.
    """
    if ratio < 0:
        raise GenerationError("ratio must be nonnegative")
    hat_norm = float(np.linalg.norm(w_hat))
    if hat_norm == 0.0:
        raise GenerationError("reference direction is zero")
    u, s, _ = np.linalg.svd(ds.Xtilde, full_matrices=False)
    basis = u[:, s > s[0] * max(ds.d, ds.n) * np.finfo(float).eps]
    hat_unit = w_hat / hat_norm
    rng = np.random.default_rng(seed)
    if ratio == 0.0:
        perp = np.zeros(ds.d)
    else:
        if basis.shape[1] < 2:
            raise GenerationError("span(X) is one-dimensional; no room for misalignment")
        for _ in range(16):
            v = basis @ rng.standard_normal(basis.shape[1])
            v = v - (v @ hat_unit) * hat_unit
            nv = np.linalg.norm(v)
            if nv > 1e-10:
                perp = v / nv
                break
        else:
            raise GenerationError("could not draw a direction perpendicular to the reference")
    theta = math.atan(ratio)
    w0 = w_norm * (math.cos(theta) * hat_unit + math.sin(theta) * perp)
    rho0 = hat_norm * math.cos(theta)
    return ModelState(w0, k * rho0)


def step_vector(state: ModelState, ds: Dataset, cfg: GDConfig) -> ModelState:
    """One simultaneous gradient step on weights and scale."""
    gw, ga = gradients(state, ds, cfg.loss)
    return ModelState(state.w - cfg.eta * gw, state.alpha - cfg.eta_alpha * ga)


def step_recurrence(
    rho: float,
    rho_perp: float,
    alpha: float,
    w_norm: float,
    eta: float,
    eta_alpha: float,
) -> tuple[float, float, float, float]:
    """One closed-form step of the whitened square-loss dynamics.

    Valid only while the alignment is positive; the weight update rotates the
    direction inside the plane spanned by the current weights and the
    reference, and the norm can only grow.
    """
    if rho <= 0.0:
        raise BranchError(f"recurrence requires positive alignment, got rho={rho}")
    wsq = w_norm * w_norm
    eff = eta * alpha * rho / wsq
    dot = rho * w_norm + eta * alpha * rho_perp * rho_perp / w_norm
    cross = rho_perp * w_norm * (1.0 - eff)
    new_norm = math.sqrt(wsq + (eta * alpha * rho_perp) ** 2 / wsq)
    new_rho = dot / new_norm
    if new_rho <= 0.0:
        raise BranchError(
            f"recurrence left the positive-alignment branch (rho went to {new_rho})"
        )
    new_perp = abs(cross) / new_norm
    new_alpha = alpha + eta_alpha * (rho - alpha)
    return new_rho, new_perp, new_alpha, new_norm


@dataclass
class RecurrenceBatch:
    """Column-per-step scalar trajectories for a batch of instances."""

    rho: np.ndarray
    rho_perp: np.ndarray
    alpha: np.ndarray
    w_norm: np.ndarray
    ratio: np.ndarray


def run_recurrence_batch(
    rho0: np.ndarray,
    rho_perp0: np.ndarray,
    alpha0: np.ndarray,
    w_norm0: np.ndarray,
    eta: float,
    eta_alpha: float,
    steps: int,
) -> RecurrenceBatch:
    """Vectorised scalar recurrence over many instances at once.

    All instances share the step sizes; per-instance step sizes can be
    expressed by rescaling ``w_norm0`` thanks to scale invariance.
    """
    rho = np.array(rho0, dtype=float)
    perp = np.array(rho_perp0, dtype=float)
    alpha = np.array(alpha0, dtype=float)
    wn = np.array(w_norm0, dtype=float)
    m = rho.size
    out = RecurrenceBatch(
        rho=np.empty((m, steps + 1)),
        rho_perp=np.empty((m, steps + 1)),
        alpha=np.empty((m, steps + 1)),
        w_norm=np.empty((m, steps + 1)),
        ratio=np.empty((m, steps + 1)),
    )
    for t in range(steps + 1):
        out.rho[:, t] = rho
        out.rho_perp[:, t] = perp
        out.alpha[:, t] = alpha
        out.w_norm[:, t] = wn
        out.ratio[:, t] = perp / rho
        if t == steps:
            break
        if np.any(rho <= 0.0):
            bad = np.flatnonzero(rho <= 0.0)
            raise BranchError(
                f"instances {bad.tolist()} left the positive-alignment branch at step {t}"
            )
        wsq = wn * wn
        eff = eta * alpha * rho / wsq
        dot = rho * wn + eta * alpha * perp * perp / wn
        cross = perp * wn * (1.0 - eff)
        wn = np.sqrt(wsq + (eta * alpha * perp) ** 2 / wsq)
        rho = dot / wn
        perp = np.abs(cross) / wn
        alpha = alpha + eta_alpha * (out.rho[:, t] - alpha)
    return out


def classify_edges(ratios: np.ndarray, tol: float) -> tuple[list[str | None], list[int]]:
    """Label each step as rising/falling/flat; None where undefined.

    Returns the labels (one per record; the final record gets None) and the
    indices of exact float ties, which are deliberately classified flat.
    """
    ratios = np.asarray(ratios, dtype=float)
    edges: list[str | None] = [None] * len(ratios)
    ties: list[int] = []
    for i in range(len(ratios) - 1):
        a, b = ratios[i], ratios[i + 1]
        if np.isnan(a) or np.isnan(b):
            continue
        if b == a:
            edges[i] = EDGE_FLAT
            ties.append(i)
        elif b >= a * (1.0 + tol):
            edges[i] = EDGE_RISING
        elif b <= a * (1.0 - tol):
            edges[i] = EDGE_FALLING
        else:
            edges[i] = EDGE_FLAT
    return edges, ties


def _run_vector(ds, w_hat, state0, cfg):
    records = []
    state = state0
    for t in range(cfg.max_iters + 1):
        stats = directional_stats(state, ds, w_hat, cfg.loss, cfg.eta)
        snap = state if (t % cfg.snapshot_every == 0 or t == cfg.max_iters) else None
        records.append(TrajectoryRecord(t=t, stats=stats, snapshot=snap))
        if t < cfg.max_iters:
            state = step_vector(state, ds, cfg)
    return records


def _run_recurrence(ds, w_hat, state0, cfg):
    hat_norm = float(np.linalg.norm(w_hat))
    s0 = directional_stats(state0, ds, w_hat, cfg.loss, cfg.eta)
    rho, perp, alpha, wn = s0.rho, s0.rho_perp, float(state0.alpha), s0.w_norm
    floor = (1.0 - hat_norm * hat_norm) / 2.0
    records = []
    for t in range(cfg.max_iters + 1):
        ratio = perp / rho if rho > 0.0 else float("nan")
        stats = DirectionalStats(
            rho=rho,
            rho_perp=perp,
            ratio=ratio,
            rho_perp_sigma=perp,
            alpha=alpha,
            w_norm=wn,
            w_sigma_norm=wn,
            eff_lr_euclid=cfg.eta * alpha * rho / wn**2,
            eff_lr_sigma=alpha * rho / wn**2,
            risk=((alpha - rho) ** 2 + perp**2) / 2.0 + floor,
        )
        records.append(TrajectoryRecord(t=t, stats=stats))
        if t < cfg.max_iters:
            rho, perp, alpha, wn = step_recurrence(rho, perp, alpha, wn, cfg.eta, cfg.eta_alpha)
    return records


def run_trajectory(
    ds: Dataset, w_hat: np.ndarray, state0: ModelState, cfg: GDConfig, meta: dict | None = None
) -> Trajectory:
    """Run gradient descent and return the labeled trajectory.

    ``w_hat`` is the reference direction all directional statistics are
    measured against. In ``recurrence`` mode the dataset must be whitened and
    the loss square; the initial scalars are read off the initial state and
    then iterated in closed form.
    """
    if cfg.mode == "recurrence":
        if cfg.loss != "square":
            raise ConfigError("recurrence mode is only defined for the square loss")
        records = _run_recurrence(ds, w_hat, state0, cfg)
    else:
        records = _run_vector(ds, w_hat, state0, cfg)
    edges, ties = classify_edges(np.array([r.stats.ratio for r in records]), cfg.edge_tol)
    for rec, edge in zip(records, edges):
        rec.edge = edge
    return Trajectory(
        records=records,
        config=cfg,
        dataset_hash=dataset_hash(ds),
        hat_norm=float(np.linalg.norm(w_hat)),
        ties=ties,
        meta=dict(meta) if meta else {},
    )


def _fmt(x: float) -> str:
    return "%.17g" % x


def trajectory_to_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for rec in traj.records:
        s = rec.stats
        buf.write(
            ",".join(
                [
                    str(rec.t),
                    _fmt(s.rho),
                    _fmt(s.rho_perp),
                    _fmt(s.ratio),
                    _fmt(s.alpha),
                    _fmt(s.w_norm),
                    _fmt(s.eff_lr_euclid),
                    _fmt(s.eff_lr_sigma),
                    _fmt(s.risk),
                    rec.edge or "",
                ]
            )
            + "\n"
        )
    return buf.getvalue()


def trajectory_to_json(traj: Trajectory) -> str:
    doc = {
        "schema_version": 1,
        "kind": "trajectory",
        "config": traj.config.as_dict(),
        "dataset_hash": traj.dataset_hash,
        "hat_norm": traj.hat_norm,
        "ties": traj.ties,
        "meta": traj.meta,
        "records": [
            {
                "t": rec.t,
                "rho": rec.stats.rho,
                "rho_perp": rec.stats.rho_perp,
                "ratio": rec.stats.ratio if not np.isnan(rec.stats.ratio) else None,
                "alpha": rec.stats.alpha,
                "w_norm": rec.stats.w_norm,
                "eff_lr_euclid": rec.stats.eff_lr_euclid,
                "eff_lr_sigma": rec.stats.eff_lr_sigma,
                "risk": rec.stats.risk,
                "edge": rec.edge,
            }
            for rec in traj.records
        ],
    }
    return json.dumps(doc, sort_keys=True)


@dataclass(frozen=True)
class SharpnessEstimate:
    value: float
    converged: bool
    iters: int


def _power_iterate(apply, dim, tol, max_iters, rng):
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, max_iters + 1):
        w = apply(v)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0, True, it
        new_lam = float(v @ w)
        v = w / nw
        if it > 1 and abs(new_lam - lam) <= tol * max(1.0, abs(new_lam)):
            return new_lam, True, it
        lam = new_lam
    return lam, False, max_iters


def top_eigenvalue_fd(
    grad_fn, theta0: np.ndarray, tol: float = 1e-4, max_iters: int = 500
) -> SharpnessEstimate:
    """Largest Hessian eigenvalue via power iteration on finite-difference
    Hessian-vector products of an analytic gradient.

    If the dominant eigenvalue by magnitude is negative, a shifted second pass
    recovers the largest signed eigenvalue.
    """
    theta0 = np.asarray(theta0, dtype=float)
    h = 1e-5 * (1.0 + float(np.linalg.norm(theta0)))

    def hvp(v):
        return (grad_fn(theta0 + h * v) - grad_fn(theta0 - h * v)) / (2.0 * h)

    rng = np.random.default_rng(0)
    lam, ok, it1 = _power_iterate(hvp, theta0.size, tol, max_iters, rng)
    if lam >= 0.0 or not ok:
        return SharpnessEstimate(value=lam, converged=ok, iters=it1)
    shift = -lam

    def shifted(v):
        return hvp(v) + shift * v

    lam2, ok2, it2 = _power_iterate(shifted, theta0.size, tol, max_iters, rng)
    return SharpnessEstimate(value=lam2 - shift, converged=ok and ok2, iters=it1 + it2)


def top_hessian_eigenvalue(
    state: ModelState, ds: Dataset, kind: str, tol: float = 1e-4, max_iters: int = 500
) -> SharpnessEstimate:
    """Sharpness of the risk surface in the joint (w, alpha) variables."""

    def grad_fn(theta):
        gw, ga = gradients(ModelState(theta[:-1], theta[-1]), ds, kind)
        return np.concatenate([gw, [ga]])

    theta0 = np.concatenate([state.w, [state.alpha]])
    return top_eigenvalue_fd(grad_fn, theta0, tol=tol, max_iters=max_iters)
