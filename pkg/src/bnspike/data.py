"""Datasets, label-signed geometry, whitening, and the two generators.

Conventions used throughout the package:

- Features live in columns: ``X`` has shape ``(d, n)``, one sample per column.
- Labels are exactly +1 or -1.
- ``Xtilde = X * y`` (columnwise sign flip), ``Sigma = Xtilde @ Xtilde.T / n``,
  ``mu = Xtilde.mean(axis=1)``.

The second-moment matrix ``Sigma`` induces the inner product used by the
batch-normalized predictor, so everything downstream goes through
:func:`sigma_inner` / :func:`sigma_norm`.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    GenerationError,
    LabelError,
    SingularSpectrumError,
)

SCHEMA_VERSION = 1

# Restricted eigenvalues of Sigma at or below this are treated as singular
# when whitening; inverting them would amplify noise past any useful tolerance.
EIGENVALUE_CLAMP = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """A labeled dataset together with its derived sign-adjusted geometry.

    Instances are immutable; all arrays are read-only views. Construct via
    :meth:`from_features` so the derived matrices stay consistent.
    """

    X: np.ndarray
    y: np.ndarray
    Xtilde: np.ndarray
    Sigma: np.ndarray
    mu: np.ndarray
    n: int
    d: int
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_features(cls, X: np.ndarray, y: np.ndarray, meta: dict | None = None) -> "Dataset":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if X.ndim != 2:
            raise DimensionError(f"X must be 2-d (features x samples), got shape {X.shape}")
        d, n = X.shape
        if y.shape != (n,):
            raise DimensionError(
                f"y has shape {y.shape}, expected ({n},) to match the {n} sample columns"
            )
        bad = np.flatnonzero(np.abs(y) != 1.0)
        if bad.size:
            raise LabelError(
                f"labels must be exactly +1 or -1; offending entries at indices {bad.tolist()}"
            )
        xt = X * y[np.newaxis, :]
        sigma = (xt @ xt.T) / n
        sigma = (sigma + sigma.T) / 2.0  # enforce exact symmetry
        mu = xt.sum(axis=1) / n
        return cls(
            X=_freeze(X),
            y=_freeze(y),
            Xtilde=_freeze(xt),
            Sigma=_freeze(sigma),
            mu=_freeze(mu),
            n=n,
            d=d,
            meta=dict(meta) if meta else {},
        )


def _check_vector(v: np.ndarray, d: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.shape != (d,):
        raise DimensionError(f"{name} has shape {v.shape}, expected ({d},)")
    return v


def sigma_inner(a: np.ndarray, b: np.ndarray, ds: Dataset) -> float:
    """Inner product <a, b> under the dataset's second-moment matrix."""
    a = _check_vector(a, ds.d, "a")
    b = _check_vector(b, ds.d, "b")
    return float(a @ ds.Sigma @ b)


def sigma_norm(a: np.ndarray, ds: Dataset) -> float:
    """Seminorm induced by Sigma (zero on the orthogonal complement of the span)."""
    # clamp tiny negative round-off before the square root
    return float(np.sqrt(max(sigma_inner(a, a, ds), 0.0)))


@dataclass(frozen=True)
class SpectrumBounds:
    """Extremal eigenvalues of Sigma restricted to span(X), plus the span basis."""

    lambda_min: float
    lambda_max: float
    span_basis: np.ndarray  # (d, r), orthonormal columns


def _span_decomposition(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis of span(Xtilde) and the Sigma-eigenvalues along it."""
    u, s, _ = np.linalg.svd(ds.Xtilde, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise SingularSpectrumError(0.0, EIGENVALUE_CLAMP)
    tol = s[0] * max(ds.d, ds.n) * np.finfo(float).eps
    r = int(np.count_nonzero(s > tol))
    lam = s[:r] ** 2 / ds.n
    return u[:, :r], lam


def spectrum_bounds(ds: Dataset) -> SpectrumBounds:
    basis, lam = _span_decomposition(ds)
    return SpectrumBounds(
        lambda_min=float(lam[-1]),
        lambda_max=float(lam[0]),
        span_basis=_freeze(basis),
    )


def whiten(ds: Dataset) -> Dataset:
    """Return a dataset whose Sigma is the identity on span(X).

    The transform inverts the square root of Sigma on the span and acts as the
    identity on its orthogonal complement. Restricted eigenvalues at or below
    ``EIGENVALUE_CLAMP`` are refused rather than clamped: inverting them would
    produce features dominated by rounding noise.
    """
    basis, lam = _span_decomposition(ds)
    if lam[-1] <= EIGENVALUE_CLAMP:
        raise SingularSpectrumError(float(lam[-1]), EIGENVALUE_CLAMP)
    proj = basis @ basis.T
    transform = basis @ np.diag(1.0 / np.sqrt(lam)) @ basis.T + (np.eye(ds.d) - proj)
    meta = dict(ds.meta)
    meta["whitened"] = True
    return Dataset.from_features(transform @ ds.X, ds.y, meta=meta)


def _random_orthogonal(rng: np.random.Generator, k: int) -> np.ndarray:
    """Haar-ish random orthogonal matrix with a sign-fixed QR decomposition."""
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))[np.newaxis, :]


def gen_hilbert_dataset(
    n: int,
    d: int,
    seed: int,
    noise_std: float,
    *,
    rotate: bool = True,
    row_offset: int = 0,
    col_offset: int = 0,
) -> Dataset:
    """Severely ill-conditioned dataset built from a slice of the Hilbert matrix.

    Samples are rows ``row_offset..row_offset+n-1`` and feature columns
    ``col_offset..col_offset+d-1`` of the infinite Hilbert matrix
    ``H[i, j] = 1 / (i + j - 1)`` (1-based). Optional random rotations scramble
    the coordinate axes without changing the spectrum; Gaussian noise of scale
    ``noise_std`` lifts the smallest restricted eigenvalues enough to make
    whitening feasible. Labels come from a random linear teacher.

    All random draws happen in a fixed order regardless of the flags, so the
    same seed always produces the same dataset for a given configuration.
    """
    if n > d:
        raise GenerationError(f"need n <= d for a wide slice, got n={n} > d={d}")
    if n < 1:
        raise GenerationError("need at least one sample")
    rows = np.arange(1 + row_offset, 1 + row_offset + n)
    cols = np.arange(1 + col_offset, 1 + col_offset + d)
    hs = 1.0 / (rows[:, np.newaxis] + cols[np.newaxis, :] - 1.0)
    x0 = hs.T  # (d, n): one sample per column

    rng = np.random.default_rng(seed)
    qd = _random_orthogonal(rng, d)
    qn = _random_orthogonal(rng, n)
    g = rng.standard_normal((d, n))
    teacher = rng.standard_normal(d)

    x = (qd @ x0 @ qn) if rotate else x0
    if noise_std:
        x = x + noise_std * g
    raw = teacher @ x
    y = np.where(raw >= 0.0, 1.0, -1.0)
    meta = {
        "generator": "hilbert",
        "seed": seed,
        "noise_std": noise_std,
        "rotate": rotate,
        "row_offset": row_offset,
        "col_offset": col_offset,
    }
    return Dataset.from_features(x, y, meta=meta)


def gen_active_margin_dataset(n: int, d: int, gamma_target: float, seed: int) -> Dataset:
    """Separable dataset whose max-margin separator has every margin active.

    Construction: pick a unit direction ``e`` and orthonormal directions
    ``q_1..q_n`` perpendicular to it, then place the sign-adjusted samples at
    ``gamma * e + c * (q_i - mean(q))``. The perturbations are mean-free and
    strictly shorter than ``gamma``, which makes ``e / gamma`` the exact
    minimum-norm solution of the unit-margin system, with strictly positive
    dual coefficients ``1 / (n * gamma^2)``. The achieved max-margin is then
    exactly ``gamma_target``.
    """
    if n >= d:
        raise GenerationError(
            f"construction needs n < d (n orthonormal perturbations plus the margin axis), got n={n}, d={d}"
        )
    if gamma_target <= 0:
        raise GenerationError("gamma_target must be positive")
    gamma = float(gamma_target)
    rng = np.random.default_rng(seed)

    e = rng.standard_normal(d)
    e /= np.linalg.norm(e)
    m = rng.standard_normal((d, n))
    m -= np.outer(e, e @ m)
    q, r = np.linalg.qr(m)
    if np.abs(np.diag(r)).min() < 1e-10:
        raise GenerationError("degenerate random draw for the perturbation basis; use another seed")
    q = q * np.sign(np.diag(r))[np.newaxis, :]

    zeta = rng.uniform(0.4, 1.0)
    if n == 1:
        p = np.zeros((d, 1))
    else:
        qbar = q.mean(axis=1, keepdims=True)
        # ||q_i - qbar|| = sqrt(1 - 1/n); scale so every perturbation stays
        # strictly inside the gamma ball
        c = 0.9 * gamma * zeta / np.sqrt(1.0 - 1.0 / n)
        p = c * (q - qbar)

    xtilde = gamma * e[:, np.newaxis] + p
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    x = xtilde * y[np.newaxis, :]

    margins = xtilde.T @ (e / gamma)
    if np.max(np.abs(margins - 1.0)) > 1e-9:
        raise GenerationError("postcondition failed: margins not exactly active")

    meta = {
        "generator": "active_margin",
        "seed": seed,
        "gamma_target": gamma,
        "zeta": float(zeta),
    }
    return Dataset.from_features(x, y, meta=meta)


def dataset_to_json(ds: Dataset) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "dataset",
        "n": ds.n,
        "d": ds.d,
        "X": [[float(v) for v in row] for row in ds.X],
        "y": [float(v) for v in ds.y],
        "meta": ds.meta,
    }
    return json.dumps(doc, sort_keys=True)


def dataset_from_json(text: str) -> Dataset:
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DimensionError(
            f"unsupported dataset schema_version {doc.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )
    X = np.asarray(doc["X"], dtype=float)
    y = np.asarray(doc["y"], dtype=float)
    return Dataset.from_features(X, y, meta=doc.get("meta") or {})


def dataset_to_csv(ds: Dataset) -> str:
    """One sample per row, features first, label in the last column."""
    buf = io.StringIO()
    for i in range(ds.n):
        vals = [repr(float(v)) for v in ds.X[:, i]]
        vals.append("%d" % int(ds.y[i]))
        buf.write(",".join(vals) + "\n")
    return buf.getvalue()


def dataset_from_csv(text: str) -> Dataset:
    rows = []
    labels = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise DimensionError(f"line {lineno}: {exc}") from exc
        if len(vals) < 2:
            raise DimensionError(f"line {lineno}: need at least one feature plus a label")
        if abs(vals[-1]) != 1.0:
            raise LabelError(f"line {lineno}: label must be +1 or -1, got {vals[-1]}")
        rows.append(vals[:-1])
        labels.append(vals[-1])
    if not rows:
        raise DimensionError("no data rows found")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DimensionError(f"inconsistent feature counts across rows: {sorted(widths)}")
    X = np.asarray(rows, dtype=float).T  # back to features-in-columns
    return Dataset.from_features(X, np.asarray(labels, dtype=float))


def dataset_hash(ds: Dataset) -> str:
    """Content hash of the dataset (features, labels, and metadata)."""
    return hashlib.sha256(dataset_to_json(ds).encode()).hexdigest()
