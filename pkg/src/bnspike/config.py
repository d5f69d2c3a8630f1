"""Run configuration: the TOML schema, its validation, and CLI overrides.

A config file fully determines a run (dataset, initial state, step sizes,
which checkers to run), so two loads of the same file always produce the
same artifacts. Unknown keys are errors, reported with their field path.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10: same parser, backport name
    import tomli as tomllib

from dataclasses import dataclass, replace

from .dynamics import GDConfig, MODES
from .errors import ConfigError
from .model import LOSS_KINDS

SCHEMA_VERSION = 1

DATASET_KINDS = ("hilbert", "active_margin", "file")
INIT_KINDS = ("ratio", "gaussian")
REFERENCE_CHOICES = ("auto", "least_squares", "svm")
ETA_SCALES = ("absolute", "window_relative")

# Flat sweep-axis names -> (section, field) in the config tree.
SWEEPABLE = {
    "eta": ("gd", "eta"),
    "eta_alpha": ("gd", "eta_alpha"),
    "max_iters": ("gd", "max_iters"),
    "seed": (None, "seed"),
    "ratio": ("init", "ratio"),
    "k": ("init", "k"),
    "alpha0": ("init", "alpha0"),
    "noise_std": ("dataset", "noise_std"),
}

MAX_SWEEP_CELLS = 10_000


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    n: int = 0
    d: int = 0
    noise_std: float = 0.0
    rotate: bool = True
    row_offset: int = 0
    col_offset: int = 0
    gamma: float = 1.2
    path: str = ""
    whiten: bool = False


@dataclass(frozen=True)
class InitSpec:
    """How the starting weights and scale are drawn.

    ``ratio`` places w0 at a prescribed misalignment angle from the reference
    direction with alpha = k * rho; ``gaussian`` draws an isotropic direction
    at norm ``w_norm`` with alpha = alpha0.
    """

    kind: str = "ratio"
    ratio: float = 0.01
    k: float = 0.1
    w_norm: float = 1.0
    alpha0: float = 0.05
    reference: str = "auto"


@dataclass(frozen=True)
class AnalysisSpec:
    linear: bool = True
    logistic: bool = False
    sharpness: bool = False
    campaign_force_run: bool = False
    # True when the TOML pinned linear/logistic itself; a --loss override
    # then leaves the suite selection alone instead of re-deriving it.
    explicit: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int
    dataset: DatasetSpec
    init: InitSpec
    gd: GDConfig
    eta_scale: str
    analysis: AnalysisSpec
    sweep: dict[str, list] | None = None

    def as_dict(self) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "dataset": dict(self.dataset.__dict__),
            "init": dict(self.init.__dict__),
            "gd": self.gd.as_dict(),
            "eta_scale": self.eta_scale,
            "analysis": {
                k: v for k, v in self.analysis.__dict__.items() if k != "explicit"
            },
        }
        if self.sweep is not None:
            doc["sweep"] = {k: list(v) for k, v in self.sweep.items()}
        return doc


def _get(table, path, key, expect, default=None, required=False):
    full = f"{path}.{key}" if path else key
    if key not in table:
        if required:
            raise ConfigError(f"{full}: missing required key")
        return default
    value = table.pop(key)
    if expect is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if expect is int and isinstance(value, bool):
        raise ConfigError(f"{full}: expected int, got bool")
    if not isinstance(value, expect):
        raise ConfigError(f"{full}: expected {expect.__name__}, got {type(value).__name__}")
    return value


def _choice(value, allowed, full):
    if value not in allowed:
        raise ConfigError(f"{full}: must be one of {allowed}, got {value!r}")
    return value


def _reject_unknown(table, path):
    if table:
        key = sorted(table)[0]
        full = f"{path}.{key}" if path else key
        raise ConfigError(f"unknown config key {full!r}")


def _parse_dataset(table) -> DatasetSpec:
    kind = _choice(_get(table, "dataset", "kind", str, required=True), DATASET_KINDS, "dataset.kind")
    spec = DatasetSpec(
        kind=kind,
        n=_get(table, "dataset", "n", int, default=0),
        d=_get(table, "dataset", "d", int, default=0),
        noise_std=_get(table, "dataset", "noise_std", float, default=0.0),
        rotate=_get(table, "dataset", "rotate", bool, default=True),
        row_offset=_get(table, "dataset", "row_offset", int, default=0),
        col_offset=_get(table, "dataset", "col_offset", int, default=0),
        gamma=_get(table, "dataset", "gamma", float, default=1.2),
        path=_get(table, "dataset", "path", str, default=""),
        whiten=_get(table, "dataset", "whiten", bool, default=False),
    )
    _reject_unknown(table, "dataset")
    if kind in ("hilbert", "active_margin"):
        if spec.n < 1 or spec.d < 1:
            raise ConfigError(f"dataset.n/dataset.d: generator {kind!r} needs positive sizes")
    if kind == "file" and not spec.path:
        raise ConfigError("dataset.path: required for kind 'file'")
    return spec


def _parse_init(table) -> InitSpec:
    spec = InitSpec(
        kind=_choice(_get(table, "init", "kind", str, default="ratio"), INIT_KINDS, "init.kind"),
        ratio=_get(table, "init", "ratio", float, default=0.01),
        k=_get(table, "init", "k", float, default=0.1),
        w_norm=_get(table, "init", "w_norm", float, default=1.0),
        alpha0=_get(table, "init", "alpha0", float, default=0.05),
        reference=_choice(
            _get(table, "init", "reference", str, default="auto"),
            REFERENCE_CHOICES,
            "init.reference",
        ),
    )
    _reject_unknown(table, "init")
    if spec.w_norm <= 0:
        raise ConfigError(f"init.w_norm: must be positive, got {spec.w_norm}")
    return spec


def _parse_gd(table) -> tuple[GDConfig, str]:
    eta = _get(table, "gd", "eta", float, required=True)
    eta_scale = _choice(
        _get(table, "gd", "eta_scale", str, default="absolute"), ETA_SCALES, "gd.eta_scale"
    )
    kwargs = dict(
        eta_alpha=_get(table, "gd", "eta_alpha", float, required=True),
        max_iters=_get(table, "gd", "max_iters", int, required=True),
        loss=_choice(_get(table, "gd", "loss", str, default="square"), LOSS_KINDS, "gd.loss"),
        mode=_choice(_get(table, "gd", "mode", str, default="vector"), MODES, "gd.mode"),
        edge_tol=_get(table, "gd", "edge_tol", float, default=0.0),
        snapshot_every=_get(table, "gd", "snapshot_every", int, default=100),
    )
    _reject_unknown(table, "gd")
    if eta_scale == "window_relative" and not 0.0 < eta < 1.0:
        raise ConfigError(f"gd.eta: window_relative scale needs a fraction in (0, 1), got {eta}")
    try:
        cfg = GDConfig(eta=eta, **kwargs)
    except ConfigError as exc:
        raise ConfigError(f"gd: {exc}") from None
    return cfg, eta_scale


def _parse_analysis(table, loss) -> AnalysisSpec:
    explicit = "linear" in table or "logistic" in table
    spec = AnalysisSpec(
        linear=_get(table, "analysis", "linear", bool, default=(loss == "square")),
        logistic=_get(table, "analysis", "logistic", bool, default=(loss == "logistic")),
        sharpness=_get(table, "analysis", "sharpness", bool, default=False),
        campaign_force_run=_get(table, "analysis", "campaign_force_run", bool, default=False),
        explicit=explicit,
    )
    _reject_unknown(table, "analysis")
    return spec


def _parse_sweep(table) -> dict[str, list]:
    axes = {}
    for key in sorted(table):
        if key not in SWEEPABLE:
            raise ConfigError(f"sweep.{key}: not a sweepable axis (choices: {sorted(SWEEPABLE)})")
        values = table.pop(key)
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{key}: expected a nonempty list")
        for v in values:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"sweep.{key}: entries must be numbers, got {v!r}")
        axes[key] = values
    cells = 1
    for values in axes.values():
        cells *= len(values)
    if cells > MAX_SWEEP_CELLS:
        raise ConfigError(f"sweep: grid has {cells} cells, limit is {MAX_SWEEP_CELLS}")
    return axes


def parse_config(text: str) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None

    version = _get(doc, "", "schema_version", int, required=True)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version}")
    seed = _get(doc, "", "seed", int, default=0)
    if seed < 0:
        raise ConfigError(f"seed: must be nonnegative, got {seed}")

    dataset = _parse_dataset(_get(doc, "", "dataset", dict, required=True))
    init = _parse_init(_get(doc, "", "init", dict, default={}))
    gd, eta_scale = _parse_gd(_get(doc, "", "gd", dict, required=True))
    analysis = _parse_analysis(_get(doc, "", "analysis", dict, default={}), gd.loss)
    sweep_table = _get(doc, "", "sweep", dict, default=None)
    sweep = _parse_sweep(sweep_table) if sweep_table is not None else None
    _reject_unknown(doc, "")

    if eta_scale == "window_relative" and init.kind != "ratio":
        raise ConfigError("gd.eta_scale: window_relative requires init.kind = 'ratio'")
    return RunConfig(
        seed=seed,
        dataset=dataset,
        init=init,
        gd=gd,
        eta_scale=eta_scale,
        analysis=analysis,
        sweep=sweep,
    )


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        text = fh.read().decode("utf-8")
    return parse_config(text)


def apply_overrides(cfg: RunConfig, seed=None, loss=None, mode=None) -> RunConfig:
    """Fold the CLI-level flag overrides into a parsed config."""
    if seed is not None:
        if seed < 0:
            raise ConfigError(f"seed: must be nonnegative, got {seed}")
        cfg = replace(cfg, seed=seed)
    gd = cfg.gd
    if loss is not None or mode is not None:
        gd = replace(gd, loss=loss or gd.loss, mode=mode or gd.mode)
        cfg = replace(cfg, gd=gd)
        if loss is not None and not cfg.analysis.explicit:
            # keep the checker defaults in step with the overridden loss
            cfg = replace(
                cfg,
                analysis=replace(
                    cfg.analysis, linear=(gd.loss == "square"), logistic=(gd.loss == "logistic")
                ),
            )
    return cfg


def set_axis(cfg: RunConfig, axis: str, value) -> RunConfig:
    """Return a copy of ``cfg`` with one sweep axis set to ``value``."""
    if axis not in SWEEPABLE:
        raise ConfigError(f"sweep axis {axis!r} unknown (choices: {sorted(SWEEPABLE)})")
    section, field_name = SWEEPABLE[axis]
    if section is None:
        return replace(cfg, **{field_name: int(value)})
    sub = getattr(cfg, section)
    if field_name in ("max_iters",):
        value = int(value)
    return replace(cfg, **{section: replace(sub, **{field_name: value})})
