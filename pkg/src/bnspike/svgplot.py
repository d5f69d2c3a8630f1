"""Standalone SVG emission for trajectory runs.

Three vertically aligned 900x300 panels per run: risk against step, the two
effective learning rates against step (separate y-axes, their scales differ
by orders of magnitude on unwhitened data), and the misalignment ratio with
every maximal rising span shaded. No plotting dependency: the file is built
from f-string fragments and is valid on its own. The plotted numbers are
also written as a CSV so external tooling can redraw them.
"""

from __future__ import annotations

import io
import math
from pathlib import Path

import numpy as np

from .dynamics import Trajectory
from .errors import PlotDataError

PANEL_WIDTH = 900
PANEL_HEIGHT = 300
MARGIN_LEFT = 64
MARGIN_RIGHT = 64
MARGIN_TOP = 28
MARGIN_BOTTOM = 36

COLOR_RISK = "#1f77b4"
COLOR_EUCLID = "#d62728"
COLOR_SIGMA = "#9467bd"
COLOR_RATIO = "#2ca02c"
COLOR_SHARPNESS = "#8c564b"
COLOR_RISING = "#f2c14e"
COLOR_AXIS = "#444444"
COLOR_GRID = "#dddddd"


class SvgCanvas:
    """Accumulates SVG fragments; emits a standalone document."""

    def __init__(self, width: int, height: int) -> None:
        self.width = width
        self.height = height
        self.parts: list[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}" '
            f'font-family="monospace" font-size="11">\n'
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>\n'
        ]

    def rect(self, x: float, y: float, w: float, h: float, fill: str, opacity: float | None = None) -> None:
        op = f' fill-opacity="{opacity:g}"' if opacity is not None else ""
        self.parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" fill="{fill}"{op}/>\n'
        )

    def line(self, x1: float, y1: float, x2: float, y2: float, stroke: str, width: float = 1.0) -> None:
        self.parts.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
            f'stroke="{stroke}" stroke-width="{width:g}"/>\n'
        )

    def polyline(self, points: list[tuple[float, float]], stroke: str, width: float = 1.3) -> None:
        if len(points) == 1:
            self.circle(points[0][0], points[0][1], 2.5, stroke)
            return
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{width:g}" stroke-linejoin="round"/>\n'
        )

    def circle(self, x: float, y: float, r: float, fill: str) -> None:
        self.parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:g}" fill="{fill}"/>\n')

    def text(self, x: float, y: float, s: str, anchor: str = "start", fill: str = COLOR_AXIS) -> None:
        self.parts.append(
            f'<text x="{x:.2f}" y="{y:.2f}" text-anchor="{anchor}" fill="{fill}">{s}</text>\n'
        )

    def finish(self) -> str:
        return "".join(self.parts) + "</svg>\n"


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Tick positions on the 1-2-5 ladder covering [lo, hi]."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * mag
        if (hi - lo) / step <= target:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _tick_label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:g}"


def rising_spans(edges: list[str | None]) -> list[tuple[int, int]]:
    """Maximal rising runs as closed step intervals [t_start, t_end].

    The edge at index t labels the step t -> t+1, so a run of rising edges
    a..b covers the states a through b+1.
    """
    spans = []
    start = None
    for i, e in enumerate(edges):
        if e == "rising":
            if start is None:
                start = i
        elif start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, len(edges)))
    return spans


class _Scale:
    """Affine map from data space to pixel space, optionally log10 in y."""

    def __init__(self, lo: float, hi: float, px_lo: float, px_hi: float, log: bool = False) -> None:
        if log:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi <= lo:
            pad = 0.5 if lo == 0 else abs(lo) * 0.05 + 1e-12
            lo, hi = lo - pad, hi + pad
        self.lo = lo
        self.hi = hi
        self.px_lo = px_lo
        self.px_hi = px_hi
        self.log = log

    def __call__(self, v: float) -> float:
        if self.log:
            v = math.log10(v)
        frac = (v - self.lo) / (self.hi - self.lo)
        return self.px_lo + frac * (self.px_hi - self.px_lo)


def _finite_range(arrays: list[np.ndarray], positive_only: bool = False) -> tuple[float, float]:
    vals: list[float] = []
    for a in arrays:
        for v in a:
            if math.isfinite(v) and (not positive_only or v > 0):
                vals.append(float(v))
    if not vals:
        return (0.0, 1.0)
    lo, hi = min(vals), max(vals)
    if positive_only:
        return (lo, hi if hi > lo else lo * 10)
    pad = (hi - lo) * 0.06
    if pad == 0:
        pad = abs(hi) * 0.1 + 0.5
    return (lo - pad, hi + pad)


def _segments(ts: np.ndarray, vs: np.ndarray, xs: _Scale, ys: _Scale) -> list[list[tuple[float, float]]]:
    """Pixel polyline segments, split at nan (and nonpositive values in log y)."""
    segs: list[list[tuple[float, float]]] = []
    cur: list[tuple[float, float]] = []
    for t, v in zip(ts, vs):
        bad = not math.isfinite(v) or (ys.log and v <= 0)
        if bad:
            if cur:
                segs.append(cur)
                cur = []
            continue
        cur.append((xs(float(t)), ys(float(v))))
    if cur:
        segs.append(cur)
    return segs


def _y_ticks(scale: _Scale) -> list[float]:
    if scale.log:
        lo = math.ceil(scale.lo - 1e-9)
        hi = math.floor(scale.hi + 1e-9)
        if hi < lo:
            return [10.0 ** scale.lo]
        return [10.0 ** k for k in range(lo, hi + 1)]
    return nice_ticks(scale.lo, scale.hi)


def _draw_panel_frame(c: SvgCanvas, y0: float, title: str, xs: _Scale, x_label: bool) -> None:
    left = MARGIN_LEFT
    right = PANEL_WIDTH - MARGIN_RIGHT
    top = y0 + MARGIN_TOP
    bottom = y0 + PANEL_HEIGHT - MARGIN_BOTTOM
    c.text(left, y0 + 16, title)
    c.line(left, bottom, right, bottom, COLOR_AXIS)
    c.line(left, top, left, bottom, COLOR_AXIS)
    for t in nice_ticks(xs.lo, xs.hi, 8):
        px = xs(t)
        c.line(px, bottom, px, bottom + 4, COLOR_AXIS)
        if x_label:
            c.text(px, bottom + 16, _tick_label(t), anchor="middle")
    if x_label:
        c.text((left + right) / 2, y0 + PANEL_HEIGHT - 4, "t", anchor="middle")


def _draw_y_axis(c: SvgCanvas, ys: _Scale, side: str, color: str = COLOR_AXIS, grid: bool = False) -> None:
    left = MARGIN_LEFT
    right = PANEL_WIDTH - MARGIN_RIGHT
    for v in _y_ticks(ys):
        py = ys(v)
        if grid:
            c.line(left, py, right, py, COLOR_GRID, 0.5)
        if side == "left":
            c.line(left - 4, py, left, py, color)
            c.text(left - 7, py + 4, _tick_label(v), anchor="end", fill=color)
        else:
            c.line(right, py, right + 4, py, color)
            c.text(right + 7, py + 4, _tick_label(v), anchor="start", fill=color)


def render_trajectory_svg(
    traj: Trajectory,
    *,
    log_risk: bool = False,
    sharpness: list[tuple[int, float, bool]] | None = None,
) -> str:
    """Render the three stacked panels as one standalone SVG string."""
    ts = np.array([rec.t for rec in traj.records], dtype=float)
    risk = traj.column("risk")
    ehe = traj.column("eff_lr_euclid")
    ehs = traj.column("eff_lr_sigma")
    ratio = traj.column("ratio")
    edges = [rec.edge for rec in traj.records]
    spans = rising_spans(edges)

    t_hi = float(ts[-1]) if len(ts) > 1 else float(ts[0]) + 1.0
    c = SvgCanvas(PANEL_WIDTH, 3 * PANEL_HEIGHT)
    xs = _Scale(float(ts[0]), t_hi, MARGIN_LEFT, PANEL_WIDTH - MARGIN_RIGHT)

    # Panel 1: risk.
    y0 = 0
    top, bottom = y0 + MARGIN_TOP, y0 + PANEL_HEIGHT - MARGIN_BOTTOM
    if log_risk:
        lo, hi = _finite_range([risk], positive_only=True)
        ys = _Scale(lo, hi, bottom, top, log=True)
        title = "risk (log scale)"
    else:
        lo, hi = _finite_range([risk])
        ys = _Scale(lo, hi, bottom, top)
        title = "risk"
    _draw_panel_frame(c, y0, title, xs, x_label=False)
    _draw_y_axis(c, ys, "left", grid=True)
    for seg in _segments(ts, risk, xs, ys):
        c.polyline(seg, COLOR_RISK)

    # Panel 2: both effective learning rates, one y-axis each.
    y0 = PANEL_HEIGHT
    top, bottom = y0 + MARGIN_TOP, y0 + PANEL_HEIGHT - MARGIN_BOTTOM
    lo_e, hi_e = _finite_range([ehe])
    lo_s, hi_s = _finite_range([ehs])
    ys_e = _Scale(lo_e, hi_e, bottom, top)
    ys_s = _Scale(lo_s, hi_s, bottom, top)
    _draw_panel_frame(c, y0, "effective learning rate", xs, x_label=False)
    _draw_y_axis(c, ys_e, "left", COLOR_EUCLID, grid=True)
    _draw_y_axis(c, ys_s, "right", COLOR_SIGMA)
    for seg in _segments(ts, ehe, xs, ys_e):
        c.polyline(seg, COLOR_EUCLID)
    for seg in _segments(ts, ehs, xs, ys_s):
        c.polyline(seg, COLOR_SIGMA)
    lx = PANEL_WIDTH - MARGIN_RIGHT - 190
    c.line(lx, y0 + 14, lx + 18, y0 + 14, COLOR_EUCLID, 2)
    c.text(lx + 24, y0 + 18, "eff_lr_euclid")
    c.line(lx, y0 + 28, lx + 18, y0 + 28, COLOR_SIGMA, 2)
    c.text(lx + 24, y0 + 32, "eff_lr_sigma")

    # Panel 3: misalignment ratio with rising spans shaded underneath,
    # optional sharpness snapshots on the right axis.
    y0 = 2 * PANEL_HEIGHT
    top, bottom = y0 + MARGIN_TOP, y0 + PANEL_HEIGHT - MARGIN_BOTTOM
    lo_r, hi_r = _finite_range([ratio])
    ys_r = _Scale(lo_r, hi_r, bottom, top)
    for a, b in spans:
        x_a, x_b = xs(float(a)), xs(float(b))
        c.rect(x_a, top, max(x_b - x_a, 0.5), bottom - top, COLOR_RISING, opacity=0.35)
    _draw_panel_frame(c, y0, "ratio rho_perp/rho (rising spans shaded)", xs, x_label=True)
    _draw_y_axis(c, ys_r, "left", COLOR_RATIO, grid=True)
    for seg in _segments(ts, ratio, xs, ys_r):
        c.polyline(seg, COLOR_RATIO)
    if sharpness:
        sv = np.array([v for _, v, _ in sharpness], dtype=float)
        st = np.array([t for t, _, _ in sharpness], dtype=float)
        lo_h, hi_h = _finite_range([sv])
        ys_h = _Scale(lo_h, hi_h, bottom, top)
        _draw_y_axis(c, ys_h, "right", COLOR_SHARPNESS)
        for seg in _segments(st, sv, xs, ys_h):
            c.polyline(seg, COLOR_SHARPNESS)
        for t, v, _ in sharpness:
            if math.isfinite(v):
                c.circle(xs(float(t)), ys_h(float(v)), 2.0, COLOR_SHARPNESS)
        lx = PANEL_WIDTH - MARGIN_RIGHT - 190
        c.line(lx, y0 + 14, lx + 18, y0 + 14, COLOR_SHARPNESS, 2)
        c.text(lx + 24, y0 + 18, "sharpness")

    return c.finish()


def plotdata_csv(traj: Trajectory, sharpness: list[tuple[int, float, bool]] | None = None) -> str:
    """The numbers behind the panels, one row per recorded step."""
    spans = rising_spans([rec.edge for rec in traj.records])
    in_span = set()
    for a, b in spans:
        in_span.update(range(a, b + 1))
    sharp_at = {t: v for t, v, _ in sharpness} if sharpness else {}
    buf = io.StringIO()
    header = "t,risk,eff_lr_euclid,eff_lr_sigma,ratio,rising"
    if sharpness is not None:
        header += ",sharpness"
    buf.write(header + "\n")
    for rec in traj.records:
        s = rec.stats
        row = [
            str(rec.t),
            "%.17g" % s.risk,
            "%.17g" % s.eff_lr_euclid,
            "%.17g" % s.eff_lr_sigma,
            "%.17g" % s.ratio,
            "1" if rec.t in in_span else "0",
        ]
        if sharpness is not None:
            row.append("%.17g" % sharp_at[rec.t] if rec.t in sharp_at else "")
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


SHARPNESS_HEADER = "t,sharpness,converged"


def sharpness_from_csv(text: str) -> list[tuple[int, float, bool]]:
    """Parse sharpness snapshots; malformed rows name their line number."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != SHARPNESS_HEADER:
        raise PlotDataError(
            f"line 1: expected header '{SHARPNESS_HEADER}', got "
            f"{lines[0].strip() if lines else '<empty file>'!r}"
        )
    out = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise PlotDataError(f"line {i}: expected 3 fields, got {len(parts)}")
        try:
            t = int(parts[0])
            v = float(parts[1])
        except ValueError as exc:
            raise PlotDataError(f"line {i}: {exc}") from None
        if parts[2] not in ("0", "1"):
            raise PlotDataError(f"line {i}: converged flag must be 0 or 1, got {parts[2]!r}")
        out.append((t, v, parts[2] == "1"))
    return out


def write_plot(
    traj: Trajectory,
    out_dir: str | Path,
    *,
    log_risk: bool = False,
    sharpness: list[tuple[int, float, bool]] | None = None,
    stem: str = "plot",
) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    svg_path = out / f"{stem}.svg"
    csv_path = out / f"{stem}data.csv"
    svg_path.write_text(render_trajectory_svg(traj, log_risk=log_risk, sharpness=sharpness))
    csv_path.write_text(plotdata_csv(traj, sharpness))
    return {"svg": svg_path, "plotdata": csv_path}
