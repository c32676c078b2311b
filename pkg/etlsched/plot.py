"""
SVG line charts of sweep results.

Reads a sweep summary CSV (``value, mean, sd``) or a long-form sweep CSV
(``value, result, status``, summarized on the fly) and draws the mean as one
polyline over a shaded mean +- sd band. The output is plain text with fixed
number formatting, so identical input gives identical bytes.
"""

import math
from typing import List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import pandas as pd

from .errors import UsageError
from .experiments import SweepParam
from .log import get_logger

logger = get_logger(__name__)

WIDTH = 640
HEIGHT = 400
MARGIN_LEFT = 70
MARGIN_RIGHT = 20
MARGIN_TOP = 30
MARGIN_BOTTOM = 55
N_TICKS = 5

PLOT_KINDS = ("auto", "lr", "gamma", "nodes")


def _require(frame: pd.DataFrame, columns: Sequence[str], path: str) -> None:
    for column in columns:
        if column not in frame.columns:
            raise UsageError(f"{path}: missing column '{column}'")


def load_series(path: str) -> Tuple[pd.DataFrame, str, str]:
    """
    Read ``path`` into a frame with ``value``, ``mean`` and ``sd`` columns.

    Returns:
        ``(frame, param, metric)``; param and metric are empty when the CSV
        does not name them

    Raises:
        UsageError: A required column is missing or there are no data rows
    """
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    except pd.errors.EmptyDataError:
        raise UsageError(f"{path}: no data rows") from None
    _require(frame, ["value"], path)
    if "mean" not in frame.columns:
        _require(frame, ["result"], path)
        if "status" in frame.columns:
            frame = frame[frame["status"] == "ok"]
        frame = frame.dropna(subset=["result"])
        grouped = frame.groupby("value", sort=False)["result"]
        stats = pd.DataFrame({"mean": grouped.mean(), "sd": grouped.std(ddof=1).fillna(0.0)}).reset_index()
        stats["param"] = frame["param"].iloc[0] if "param" in frame.columns and len(frame) else ""
        stats["metric"] = frame["metric"].iloc[0] if "metric" in frame.columns and len(frame) else ""
        frame = stats
    _require(frame, ["mean", "sd"], path)
    frame = frame.dropna(subset=["mean"])
    if frame.empty:
        raise UsageError(f"{path}: no data rows")
    frame = frame.sort_values("value", kind="mergesort")
    param = str(frame["param"].iloc[0]) if "param" in frame.columns else ""
    metric = str(frame["metric"].iloc[0]) if "metric" in frame.columns else "mean"
    return frame.reset_index(drop=True), param, metric


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _tick_label(value: float, log_x: bool) -> str:
    return f"{value:.0e}" if log_x else f"{value:.4g}"


def render_svg(
    xs: Sequence[float], means: Sequence[float], sds: Sequence[float], x_label: str, y_label: str, log_x: bool = False
) -> str:
    """Chart as an SVG document string."""
    if not xs:
        raise UsageError("nothing to plot")
    if log_x and min(xs) <= 0:
        raise UsageError("log x-axis needs positive values")
    tx = [math.log10(x) for x in xs] if log_x else list(xs)
    lows = [m - s for m, s in zip(means, sds)]
    highs = [m + s for m, s in zip(means, sds)]
    x_min, x_max = min(tx), max(tx)
    y_min, y_max = min(lows), max(highs)
    if x_max == x_min:
        x_min, x_max = x_min - 1.0, x_max + 1.0
    if y_max == y_min:
        y_min, y_max = y_min - 1.0, y_max + 1.0
    pad = 0.05 * (y_max - y_min)
    y_min, y_max = y_min - pad, y_max + pad

    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def px(x: float) -> float:
        return MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w

    def py(y: float) -> float:
        return MARGIN_TOP + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h

    line = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(tx, means))
    band_pts = [(px(x), py(h)) for x, h in zip(tx, highs)]
    band_pts += [(px(x), py(lo)) for x, lo in reversed(list(zip(tx, lows)))]
    band = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in band_pts)
    x0, y0 = MARGIN_LEFT, MARGIN_TOP + plot_h

    out: List[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<polygon points="{band}" fill="#4c72b0" fill-opacity="0.2" stroke="none"/>',
        f'<polyline points="{line}" fill="none" stroke="#4c72b0" stroke-width="2"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{MARGIN_TOP}" x2="{x0}" y2="{y0}" stroke="black"/>',
    ]
    for x, t in zip(xs, tx):
        out.append(
            f'<text x="{_fmt(px(t))}" y="{_fmt(y0 + 16)}" text-anchor="middle">{escape(_tick_label(x, log_x))}</text>'
        )
    for i in range(N_TICKS):
        y = y_min + (y_max - y_min) * i / (N_TICKS - 1)
        out.append(f'<text x="{x0 - 6}" y="{_fmt(py(y) + 4)}" text-anchor="end">{y:.4g}</text>')
    out.append(
        f'<text x="{_fmt(MARGIN_LEFT + plot_w / 2)}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x_label)}</text>'
    )
    out.append(
        f'<text x="16" y="{_fmt(MARGIN_TOP + plot_h / 2)}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_fmt(MARGIN_TOP + plot_h / 2)})">{escape(y_label)}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_sweep(csv_path: str, out_path: str, kind: str = "auto", log_x: Optional[bool] = None) -> str:
    """
    Render ``csv_path`` to ``out_path``.

    Args:
        csv_path: Sweep summary or long-form CSV
        out_path: SVG file to write
        kind: Swept parameter (``lr``, ``gamma``, ``nodes``) or ``auto`` to read it from the CSV
        log_x: Force the x-axis scale; by default logarithmic for learning rates

    Returns:
        ``out_path``
    """
    if kind not in PLOT_KINDS:
        raise UsageError(f"unknown plot kind '{kind}', expected one of {', '.join(PLOT_KINDS)}")
    frame, param, metric = load_series(csv_path)
    param = param if kind == "auto" else kind
    if log_x is None:
        log_x = param in PLOT_KINDS[1:] and SweepParam.parse(param).log_scale
    x_label = {"lr": "learning rate", "gamma": "discount factor", "nodes": "number of nodes"}.get(param, "value")
    svg = render_svg(
        [float(v) for v in frame["value"]],
        [float(v) for v in frame["mean"]],
        [float(v) for v in frame["sd"]],
        x_label=x_label,
        y_label=f"{metric} (mean +- sd)",
        log_x=log_x,
    )
    try:
        with open(out_path, mode="w", encoding="utf-8", newline="\n") as f:
            f.write(svg)
    except OSError as exc:
        raise UsageError(f"cannot write '{out_path}': {exc.strerror}") from exc
    logger.info("wrote %s (%d points)", out_path, len(frame))
    return out_path
