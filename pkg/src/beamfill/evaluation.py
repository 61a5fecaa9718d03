"""Evaluation metrics and report rendering.

Computes 1-Wasserstein distances between the true-best and achieved RSRP
distributions, nearest-rank percentile tables of the search gap, and
empirical CDFs, then renders CSV tables and self-contained SVG overlays.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ReportError

GAP_PERCENTILES = (50, 90, 95, 99)


def wasserstein1(a, b) -> float:
    """1-Wasserstein distance between two empirical samples (dB).

    Equal sizes reduce to the mean absolute difference of sorted order
    statistics; unequal sizes integrate |F_a - F_b| exactly over the
    merged support of the two piecewise-constant CDFs.
    """
    a = np.sort(np.asarray(a, dtype=float).reshape(-1))
    b = np.sort(np.asarray(b, dtype=float).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein1 requires non-empty samples")
    if not np.isfinite(a).all() or not np.isfinite(b).all():
        raise ValueError("wasserstein1 requires finite samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    support = np.unique(np.concatenate([a, b]))
    f_a = np.searchsorted(a, support, side="right") / a.size
    f_b = np.searchsorted(b, support, side="right") / b.size
    widths = np.diff(support)
    return float(np.sum(np.abs(f_a[:-1] - f_b[:-1]) * widths))


def nearest_rank(values, percentile: float) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th order statistic."""
    values = np.sort(np.asarray(values, dtype=float).reshape(-1))
    if values.size == 0:
        raise ValueError("percentile of an empty sample")
    rank = int(np.ceil(percentile / 100.0 * values.size))
    rank = min(max(rank, 1), values.size)
    return float(values[rank - 1])


def gap_percentiles(outcomes, percentiles=GAP_PERCENTILES) -> dict:
    """Nearest-rank percentiles of the gap field over a list of outcomes."""
    if not outcomes:
        raise ValueError("gap_percentiles requires at least one outcome")
    gaps = np.array([o.gap for o in outcomes], dtype=float)
    return {int(q): nearest_rank(gaps, q) for q in percentiles}


def cdf_points(samples):
    """Right-continuous empirical CDF as (values, F) arrays; F ends at 1."""
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if samples.size == 0:
        raise ValueError("cdf of an empty sample")
    values, counts = np.unique(samples, return_counts=True)
    f = np.cumsum(counts) / samples.size
    return values, f


@dataclass
class ReportCell:
    """Aggregated evaluation for one (model, p, k) cell."""

    model: str
    p: float
    k: int
    w1: float
    gap_percentiles: dict
    cdf_true: np.ndarray  # sorted true-best samples
    cdf_achieved: np.ndarray  # sorted achieved samples
    n: int


def _fmt(v: float) -> str:
    return repr(float(v))


def build_report(outcomes, ks, ps, models, out_dir=None) -> dict:
    """Aggregate the sweep into per-(model, p, k) cells and render files.

    Returns {(model, p, k): ReportCell}. Raises ReportError when the
    outcome list does not cover the requested factorial.
    """
    if not outcomes:
        raise ReportError("no outcomes to report on")
    grouped = {}
    for o in outcomes:
        grouped.setdefault((o.model, o.p, o.k), []).append(o)
    cells = {}
    for model in models:
        for p in ps:
            for k in ks:
                key = (model, float(p), int(k))
                if key not in grouped:
                    raise ReportError(f"missing sweep cell: model={model} p={p} k={k}")
                cell_outcomes = grouped[key]
                true_vals = np.sort(np.array([o.true_best_rsrp for o in cell_outcomes]))
                achieved = np.sort(np.array([o.achieved_rsrp for o in cell_outcomes]))
                cells[key] = ReportCell(
                    model=model,
                    p=float(p),
                    k=int(k),
                    w1=wasserstein1(true_vals, achieved),
                    gap_percentiles=gap_percentiles(cell_outcomes),
                    cdf_true=true_vals,
                    cdf_achieved=achieved,
                    n=len(cell_outcomes),
                )
    if out_dir is not None:
        render_report_files(cells, ks, ps, models, out_dir)
    return cells


def render_report_files(cells, ks, ps, models, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "w1.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "p", "k", "w1_db", "n"])
        for model in models:
            for p in ps:
                for k in ks:
                    c = cells[(model, float(p), int(k))]
                    w.writerow([model, _fmt(p), k, _fmt(c.w1), c.n])
    with open(out / "percentiles.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "p", "k", "percentile", "gap_db"])
        for model in models:
            for p in ps:
                for k in ks:
                    c = cells[(model, float(p), int(k))]
                    for q in sorted(c.gap_percentiles):
                        w.writerow([model, _fmt(p), k, q, _fmt(c.gap_percentiles[q])])
    for model in models:
        for p in ps:
            _write_cdf_csv(cells, ks, model, p, out)
            _write_cdf_svg(cells, ks, model, p, out)


def _cdf_stem(model, p) -> str:
    return f"cdf_{model}_{p:g}"


def _write_cdf_csv(cells, ks, model, p, out: Path) -> None:
    first = cells[(model, float(p), int(ks[0]))]
    columns = {"true": first.cdf_true}
    for k in ks:
        columns[f"k{k}"] = cells[(model, float(p), int(k))].cdf_achieved
    n = first.n
    with open(out / f"{_cdf_stem(model, p)}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(columns))
        for i in range(n):
            w.writerow([_fmt(columns[name][i]) for name in columns])


# --- minimal SVG line plots (no plotting dependency) -----------------------

_PALETTE = ("#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_polyline(xs, ys, x0, x1, y0, y1, wpx, hpx, mleft, mtop, color, dashed=False):
    span_x = (x1 - x0) or 1.0
    span_y = (y1 - y0) or 1.0
    pts = []
    for x, y in zip(xs, ys):
        px = mleft + (x - x0) / span_x * wpx
        py = mtop + hpx - (y - y0) / span_y * hpx
        pts.append(f"{px:.2f},{py:.2f}")
    dash = ' stroke-dasharray="6,4"' if dashed else ""
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} '
        f'points="{" ".join(pts)}" />'
    )


def svg_line_plot(curves, title, xlabel, ylabel, path) -> None:
    """Render labelled step-free line curves: curves = [(label, xs, ys), ...]."""
    width, height = 800, 500
    mleft, mright, mtop, mbottom = 70, 170, 40, 55
    wpx = width - mleft - mright
    hpx = height - mtop - mbottom
    x0 = min(float(np.min(xs)) for _, xs, _ in curves)
    x1 = max(float(np.max(xs)) for _, xs, _ in curves)
    y0 = min(float(np.min(ys)) for _, _, ys in curves)
    y1 = max(float(np.max(ys)) for _, _, ys in curves)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white" />',
        f'<text x="{width / 2:.0f}" y="22" text-anchor="middle" font-size="16">{title}</text>',
        f'<rect x="{mleft}" y="{mtop}" width="{wpx}" height="{hpx}" fill="none" stroke="#999" />',
    ]
    for i in range(6):
        fx = x0 + (x1 - x0) * i / 5
        px = mleft + wpx * i / 5
        parts.append(f'<line x1="{px:.1f}" y1="{mtop + hpx}" x2="{px:.1f}" y2="{mtop + hpx + 5}" stroke="#333" />')
        parts.append(
            f'<text x="{px:.1f}" y="{mtop + hpx + 20}" text-anchor="middle" font-size="11">{fx:.1f}</text>'
        )
        fy = y0 + (y1 - y0) * i / 5
        py = mtop + hpx - hpx * i / 5
        parts.append(f'<line x1="{mleft - 5}" y1="{py:.1f}" x2="{mleft}" y2="{py:.1f}" stroke="#333" />')
        parts.append(
            f'<text x="{mleft - 8}" y="{py + 4:.1f}" text-anchor="end" font-size="11">{fy:.2f}</text>'
        )
    parts.append(
        f'<text x="{mleft + wpx / 2:.0f}" y="{height - 12}" text-anchor="middle" font-size="13">{xlabel}</text>'
    )
    parts.append(
        f'<text x="18" y="{mtop + hpx / 2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 18 {mtop + hpx / 2:.0f})">{ylabel}</text>'
    )
    for i, (label, xs, ys) in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(_svg_polyline(xs, ys, x0, x1, y0, y1, wpx, hpx, mleft, mtop, color, dashed=(i == 0)))
        ly = mtop + 16 + 18 * i
        lx = mleft + wpx + 12
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 24}" y2="{ly - 4}" stroke="{color}" stroke-width="2" />')
        parts.append(f'<text x="{lx + 30}" y="{ly}" font-size="12">{label}</text>')
    parts.append("</svg>")
    with open(Path(path), "w") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")


def _write_cdf_svg(cells, ks, model, p, out: Path) -> None:
    first = cells[(model, float(p), int(ks[0]))]
    curves = []
    xs, ys = cdf_points(first.cdf_true)
    curves.append(("true best", xs, ys))
    for k in ks:
        xs, ys = cdf_points(cells[(model, float(p), int(k))].cdf_achieved)
        curves.append((f"top-{k}", xs, ys))
    svg_line_plot(
        curves,
        title=f"{model}: achieved vs true-best RSRP CDF (masking {p:g})",
        xlabel="L1-RSRP (dB)",
        ylabel="CDF",
        path=out / f"{_cdf_stem(model, p)}.svg",
    )
