"""The batch-normalized linear predictor, its losses, risk, and gradients.

The predictor produces the signed logit

    z_i = alpha * y_i * <x_i, w> / ||w||_Sigma

so the weight direction enters only through its Sigma-normalized projection
onto the data. Both supported losses are convex in z:

- ``square``: (1 - z)^2 / 2
- ``logistic``: log(1 + exp(-z))

Risk is the sample mean of the per-sample loss. Gradients are analytic; they
are exactly orthogonal to ``w`` (scale invariance) and lie in span(X).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, _freeze
from .errors import DegenerateStateError

# Below this Sigma-seminorm the normalization is numerically meaningless.
DEGENERATE_NORM = 1e-14

LOSS_KINDS = ("square", "logistic")


@dataclass(frozen=True)
class ModelState:
    """Weights and the trainable output scale."""

    w: np.ndarray
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "w", _freeze(self.w))
        object.__setattr__(self, "alpha", float(self.alpha))


def _check_kind(kind: str) -> None:
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}, expected one of {LOSS_KINDS}")


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def loss_value(z: np.ndarray, kind: str) -> np.ndarray:
    _check_kind(kind)
    z = np.asarray(z, dtype=float)
    if kind == "square":
        return 0.5 * (1.0 - z) ** 2
    return np.logaddexp(0.0, -z)


def loss_deriv(z: np.ndarray, kind: str) -> np.ndarray:
    _check_kind(kind)
    z = np.asarray(z, dtype=float)
    if kind == "square":
        return z - 1.0
    return -_sigmoid(-z)


def _sigma_image_and_norm(state: ModelState, ds: Dataset) -> tuple[np.ndarray, float]:
    sw = ds.Sigma @ state.w
    sq = float(state.w @ sw)
    norm = np.sqrt(sq) if sq > 0.0 else 0.0
    if norm <= DEGENERATE_NORM:
        raise DegenerateStateError(
            f"Sigma-seminorm of w is {norm:.3e}; the direction is (numerically) "
            "orthogonal to the data span and the predictor is undefined"
        )
    return sw, norm


def signed_logits(state: ModelState, ds: Dataset) -> np.ndarray:
    """Per-sample signed logits alpha * Xtilde^T w / ||w||_Sigma."""
    _, norm = _sigma_image_and_norm(state, ds)
    return state.alpha * (ds.Xtilde.T @ state.w) / norm


def risk(state: ModelState, ds: Dataset, kind: str) -> float:
    return float(np.mean(loss_value(signed_logits(state, ds), kind)))


def gradients(state: ModelState, ds: Dataset, kind: str) -> tuple[np.ndarray, float]:
    """Analytic (grad_w, grad_alpha) of the risk at the given state."""
    _check_kind(kind)
    sw, norm = _sigma_image_and_norm(state, ds)
    s = (ds.Xtilde.T @ state.w) / norm
    lp = loss_deriv(state.alpha * s, kind)
    mean_feature_term = ds.Xtilde @ lp / ds.n
    calibration = float(s @ lp) / ds.n
    gw = (state.alpha / norm) * (mean_feature_term - sw * calibration / norm)
    return gw, calibration


def grad_w(state: ModelState, ds: Dataset, kind: str) -> np.ndarray:
    return gradients(state, ds, kind)[0]


def grad_alpha(state: ModelState, ds: Dataset, kind: str) -> float:
    return gradients(state, ds, kind)[1]
