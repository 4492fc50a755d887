"""Report files: CSV tables, JSON summaries and self-contained SVG charts."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .backtest import BacktestReport, summarize
from .estimators import CorrelationModel
from .portfolio import EigenRiskProfile

__all__ = [
    "bar_chart_svg",
    "line_chart_svg",
    "write_correlation",
    "write_report",
    "write_riskmodes",
]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def _num(v: float) -> str:
    return repr(float(v))


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_matrix_csv(m: np.ndarray, labels: Sequence[str], path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *labels])
        for lab, row in zip(labels, m):
            w.writerow([lab, *(_num(v) for v in row)])


def write_correlation(model: CorrelationModel, labels: Sequence[str], path: Path, extra: dict | None = None) -> None:
    """Matrix as CSV plus a ``<name>.json`` metadata sidecar."""
    write_matrix_csv(model.matrix, labels, path)
    meta = {
        "provenance": model.provenance,
        "sample_shape": list(model.sample_shape) if model.sample_shape else None,
        "meta": {k: v for k, v in model.meta.items() if k != "cleaned_eigenvalues"},
    }
    if extra:
        meta.update(extra)
    write_json(meta, path.with_suffix(".json"))


def write_riskmodes(profiles: Mapping[str, EigenRiskProfile], path: Path) -> None:
    names = list(profiles)
    lam = next(iter(profiles.values())).eigenvalues
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "eigenvalue", *names])
        for a in range(len(lam)):
            w.writerow([a + 1, _num(lam[a]), *(_num(profiles[k].per_mode_risk[a]) for k in names)])


def _frame(width: int, height: int, title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for mult in (1, 2, 5, 10):
        if (hi - lo) / (step * mult) <= n:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    return [first + i * step for i in range(int((hi - first) / step) + 1)]


def line_chart_svg(series: Mapping[str, Sequence[float]], title: str = "", x_labels: Sequence[str] | None = None,
                   width: int = 800, height: int = 420) -> str:
    """Multi-series line chart; x is the sample index."""
    left, right, top, bottom = 60, 130, 30, 40
    pw, ph = width - left - right, height - top - bottom
    values = [np.asarray(v, dtype=float) for v in series.values()]
    n = max((len(v) for v in values), default=0)
    allv = np.concatenate(values) if values else np.zeros(1)
    lo, hi = float(np.min(allv, initial=0.0)), float(np.max(allv, initial=0.0))
    if hi == lo:
        hi = lo + 1.0
    sx = lambda i: left + pw * (i / max(n - 1, 1))
    sy = lambda v: top + ph * (1 - (v - lo) / (hi - lo))
    out = _frame(width, height, title)
    for tv in _ticks(lo, hi):
        y = sy(tv)
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 5}" y="{y + 4:.1f}" text-anchor="end">{tv:g}</text>')
    if x_labels is not None and n > 1:
        for k in range(5):
            i = round(k * (n - 1) / 4)
            out.append(f'<text x="{sx(i):.1f}" y="{height - 15}" text-anchor="middle">{escape(str(x_labels[i]))}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    stride = max(1, n // 1500)
    for k, (name, v) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{sx(i):.1f},{sy(v[i]):.1f}" for i in range(0, len(v), stride))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.3" points="{pts}"/>')
        ly = top + 15 + 16 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart_svg(groups: Mapping[str, Sequence[float]], title: str = "", width: int = 800, height: int = 420,
                  log: bool = True) -> str:
    """Grouped bars per eigenmode, one colour per method; log10 y-axis by default."""
    left, right, top, bottom = 60, 130, 30, 40
    pw, ph = width - left - right, height - top - bottom
    names = list(groups)
    data = np.array([np.asarray(groups[k], dtype=float) for k in names])
    if log:
        data = np.log10(np.maximum(data, 1e-300))
    n_modes = data.shape[1]
    lo, hi = min(float(data.min()), 0.0), max(float(data.max()), 0.0)
    if hi == lo:
        hi = lo + 1.0
    sy = lambda v: top + ph * (1 - (v - lo) / (hi - lo))
    out = _frame(width, height, title)
    for tv in _ticks(lo, hi):
        y = sy(tv)
        lab = f"1e{tv:g}" if log else f"{tv:g}"
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 5}" y="{y + 4:.1f}" text-anchor="end">{lab}</text>')
    slot = pw / n_modes
    bw = slot * 0.8 / len(names)
    for k, name in enumerate(names):
        color = PALETTE[k % len(PALETTE)]
        for a in range(n_modes):
            x = left + a * slot + slot * 0.1 + k * bw
            y0, y1 = sy(0.0), sy(data[k, a])
            out.append(f'<rect x="{x:.1f}" y="{min(y0, y1):.1f}" width="{bw:.1f}" height="{abs(y1 - y0):.1f}" fill="{color}"/>')
        ly = top + 15 + 16 * k
        out.append(f'<rect x="{left + pw + 10}" y="{ly - 6}" width="20" height="10" fill="{color}"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}">{escape(name)}</text>')
    for a in range(n_modes):
        out.append(f'<text x="{left + (a + 0.5) * slot:.1f}" y="{height - 15}" text-anchor="middle">{a + 1}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_report(report: BacktestReport, outdir: str | Path, extra_config: dict | None = None) -> Path:
    """pnl.csv, riskmodes.csv, summary.json and plots/*.svg under ``outdir``."""
    outdir = Path(outdir)
    (outdir / "plots").mkdir(parents=True, exist_ok=True)
    labels = report.labels
    with (outdir / "pnl.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *labels])
        for i, d in enumerate(report.dates):
            w.writerow([str(d), *(_num(report.pnl[lab][i]) for lab in labels)])
    if report.eigenrisk:
        write_riskmodes(report.eigenrisk, outdir / "riskmodes.csv")
        (outdir / "plots" / "riskmodes.svg").write_text(
            bar_chart_svg({k: v.per_mode_risk for k, v in report.eigenrisk.items()}, "Realized risk per eigenmode")
        )
    summary = {
        "methods": summarize(report),
        "config": {**report.config, **(extra_config or {})},
        "start": str(report.dates[0]) if len(report.dates) else None,
        "end": str(report.dates[-1]) if len(report.dates) else None,
        "n_days": len(report.dates),
        "assets": list(report.assets),
        "cross_prediction": report.cross_prediction,
        "estimation_failures": report.failures,
        "notes": report.notes,
    }
    write_json(summary, outdir / "summary.json")
    cum = {lab: np.cumsum(report.pnl[lab]) for lab in labels}
    (outdir / "plots" / "pnl.svg").write_text(
        line_chart_svg(cum, "Cumulative P&L (common realized volatility)", [str(d) for d in report.dates])
    )
    return outdir
