"""Static SVG plots from the metrics CSVs.

Output is plain text built by hand with fixed number formatting, so equal
inputs give byte-identical files.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 64, 150, 36, 48


def _read(path: str | Path) -> list[dict]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"missing metrics file: {p}")
    with open(p, newline="") as fh:
        return list(csv.DictReader(fh))


def _methods(rows: list[dict]) -> list[str]:
    seen: dict[str, None] = {}
    for r in rows:
        seen.setdefault(r["method"], None)
    return list(seen)


def _std(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def curve_stats(rows: list[dict], column: str = "eval_return") -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per method: (episodes, mean over seeds, sample std over seeds)."""
    out = {}
    for m in _methods(rows):
        by_ep: dict[int, list[float]] = {}
        for r in rows:
            if r["method"] == m:
                by_ep.setdefault(int(r["episode"]), []).append(float(r[column]))
        eps = np.asarray(sorted(by_ep))
        vals = [np.asarray(by_ep[e]) for e in eps]
        out[m] = (eps, np.asarray([v.mean() for v in vals]), np.asarray([_std(v) for v in vals]))
    return out


def _f(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _frame(title: str, xlabel: str, ylabel: str, xlo, xhi, ylo, yhi, xticks=True) -> list[str]:
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
           'font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W // 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for v in _ticks(ylo, yhi):
        y = TOP + ph * (1 - (v - ylo) / (yhi - ylo))
        out.append(f'<line x1="{LEFT - 4}" y1="{_f(y)}" x2="{LEFT}" y2="{_f(y)}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 6}" y="{_f(y + 4)}" text-anchor="end">{v:.4g}</text>')
    if xticks:
        for v in _ticks(xlo, xhi):
            x = LEFT + pw * (v - xlo) / (xhi - xlo)
            out.append(f'<line x1="{_f(x)}" y1="{TOP + ph}" x2="{_f(x)}" y2="{TOP + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{_f(x)}" y="{TOP + ph + 16}" text-anchor="middle">{v:.4g}</text>')
    out.append(f'<text x="{LEFT + pw // 2}" y="{H - 10}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="16" y="{TOP + ph // 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {TOP + ph // 2})">{ylabel}</text>')
    return out


def _range(lo: float, hi: float) -> tuple[float, float]:
    if hi - lo < 1e-12:
        pad = max(abs(lo) * 0.05, 0.5)
    else:
        pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def curves_svg(stats: dict, title: str = "learning curves", ylabel: str = "eval return") -> str:
    """Mean line with a shaded +-1 std band per method."""
    if not stats:
        raise ValueError("no curves to plot")
    xs = np.concatenate([s[0] for s in stats.values()])
    lo = min(float((s[1] - s[2]).min()) for s in stats.values())
    hi = max(float((s[1] + s[2]).max()) for s in stats.values())
    xlo, xhi = float(xs.min()), float(xs.max())
    if xhi == xlo:
        xhi = xlo + 1.0
    ylo, yhi = _range(lo, hi)
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(x):
        return LEFT + pw * (x - xlo) / (xhi - xlo)

    def py(y):
        return TOP + ph * (1 - (y - ylo) / (yhi - ylo))

    out = _frame(title, "episode", ylabel, xlo, xhi, ylo, yhi)
    for i, (m, (eps, mean, std)) in enumerate(stats.items()):
        color = PALETTE[i % len(PALETTE)]
        upper = [f"{_f(px(x))},{_f(py(y))}" for x, y in zip(eps, mean + std)]
        lower = [f"{_f(px(x))},{_f(py(y))}" for x, y in zip(eps[::-1], (mean - std)[::-1])]
        out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{_f(px(x))},{_f(py(y))}" for x, y in zip(eps, mean))
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = TOP + 14 + 16 * i
        out.append(f'<line x1="{W - RIGHT + 10}" y1="{ly}" x2="{W - RIGHT + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - RIGHT + 34}" y="{ly + 4}">{m}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def dci_svg(rows: list[dict]) -> str:
    """Grouped bars: D, C, I per method (mean over seeds, std as error bar)."""
    if not rows:
        raise ValueError("no DCI rows to plot")
    methods = _methods(rows)
    keys = ("D", "C", "I")
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    out = _frame("DCI", "method", "score", 0.0, 1.0, 0.0, 1.0, xticks=False)
    group = pw / len(methods)
    bar = group / (len(keys) + 1)
    for g, m in enumerate(methods):
        sub = [r for r in rows if r["method"] == m]
        for j, key in enumerate(keys):
            vals = np.asarray([float(r[key]) for r in sub])
            mean, std = float(vals.mean()), _std(vals)
            x = LEFT + g * group + bar * (j + 0.5)
            y = TOP + ph * (1 - np.clip(mean, 0, 1))
            out.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(bar)}" height="{_f(TOP + ph - y)}" '
                       f'fill="{PALETTE[j]}"/>')
            cx = x + bar / 2
            y0, y1 = (TOP + ph * (1 - np.clip(v, 0, 1)) for v in (mean - std, mean + std))
            out.append(f'<line x1="{_f(cx)}" y1="{_f(y0)}" x2="{_f(cx)}" y2="{_f(y1)}" stroke="black"/>')
        out.append(f'<text x="{_f(LEFT + (g + 0.5) * group)}" y="{TOP + ph + 16}" text-anchor="middle">{m}</text>')
    for j, key in enumerate(keys):
        ly = TOP + 14 + 16 * j
        out.append(f'<rect x="{W - RIGHT + 10}" y="{ly - 6}" width="12" height="12" fill="{PALETTE[j]}"/>')
        out.append(f'<text x="{W - RIGHT + 28}" y="{ly + 4}">{key}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plots(out_dir: str | Path) -> list[Path]:
    """Write curves.svg (and per-term curves when present) and dci.svg from the CSVs in ``out_dir``."""
    d = Path(out_dir)
    curves = _read(d / "curves.csv")
    dci_rows = _read(d / "dci.csv")
    written = []
    if curves:
        p = d / "curves.svg"
        p.write_text(curves_svg(curve_stats(curves)))
        written.append(p)
    terms = sorted((c for c in (curves[0] if curves else {}) if c.startswith("term_")),
                   key=lambda c: int(c.split("_")[1]))
    for t in terms:
        p = d / f"curves_{t}.svg"
        p.write_text(curves_svg(curve_stats(curves, t), title=f"learning curves ({t})", ylabel=t))
        written.append(p)
    if dci_rows:
        p = d / "dci.svg"
        p.write_text(dci_svg(dci_rows))
        written.append(p)
    return written
