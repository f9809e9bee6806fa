"""Deterministic SVG charts built from the run CSVs (no plotting library)."""
from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

SUBSET_COLORS = {"preserved": "#1f77b4", "deleted": "#d62728", "current": "#2ca02c"}
METRIC_COLORS = {"A": "#1f77b4", "F": "#d62728", "S": "#7f7f7f"}
W, H = 640, 360
LEFT, RIGHT, TOP, BOTTOM = 56, 150, 28, 44


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _frame(title: str, x_label: str, y_label: str) -> list[str]:
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.2f}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for k in range(6):
        v = 20 * k
        y = TOP + ph * (1 - v / 100)
        out.append(f'<line x1="{LEFT - 4}" y1="{_fmt(y)}" x2="{LEFT + pw}" y2="{_fmt(y)}" stroke="#ddd"/>')
        out.append(f'<text x="{LEFT - 6}" y="{_fmt(y + 4)}" text-anchor="end">{v}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{H - 8}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text x="14" y="{TOP + ph / 2:.2f}" text-anchor="middle" transform="rotate(-90 14 {TOP + ph / 2:.2f})">{escape(y_label)}</text>')
    return out


def _legend(entries: list[tuple[str, str | None]]) -> list[str]:
    x = W - RIGHT + 12
    out = []
    for i, (label, color) in enumerate(entries):
        y = TOP + 14 + 18 * i
        if color is not None:
            out.append(f'<line x1="{x}" y1="{y - 4}" x2="{x + 18}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x + 24 if color else x}" y="{y}">{escape(label)}</text>')
    return out


def traces_svg(rows: list[dict], title: str = "Per-epoch probe accuracy") -> str:
    """One polyline per (step, subset) over that step's epochs (epoch 0 = step start is skipped)."""
    series: dict[tuple[int, str], list[tuple[int, float]]] = {}
    for r in rows:
        epoch = int(r["epoch"])
        if epoch == 0:
            continue
        series.setdefault((int(r["step"]), r["subset"]), []).append((epoch, float(r["accuracy"])))
    steps = sorted({s for s, _ in series})
    epochs = max((e for pts in series.values() for e, _ in pts), default=1)
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    span = max(1, len(steps) * epochs - 1)

    def xy(step_idx: int, epoch: int, acc: float) -> str:
        x = LEFT + pw * (step_idx * epochs + epoch - 1) / span
        y = TOP + ph * (1 - acc / 100)
        return f"{_fmt(x)},{_fmt(y)}"

    out = _frame(title, "epoch (steps side by side)", "accuracy (%)")
    for i, step in enumerate(steps[1:], start=1):
        x = LEFT + pw * (i * epochs - 0.5) / span
        out.append(f'<line x1="{_fmt(x)}" y1="{TOP}" x2="{_fmt(x)}" y2="{TOP + ph}" stroke="#999" stroke-dasharray="4 3"/>')
    for i, step in enumerate(steps):
        out.append(f'<text x="{_fmt(LEFT + pw * (i * epochs + (epochs - 1) / 2) / span)}" y="{TOP + ph + 14}" text-anchor="middle">step {step}</text>')
    present = {sub for _, sub in series}
    for (step, subset), pts in sorted(series.items(), key=lambda kv: (kv[0][0], list(SUBSET_COLORS).index(kv[0][1]))):
        pts = sorted(pts)
        coords = " ".join(xy(steps.index(step), e, a) for e, a in pts)
        out.append(f'<polyline fill="none" stroke="{SUBSET_COLORS[subset]}" stroke-width="1.6" points="{coords}"/>')
    legend = [(s, SUBSET_COLORS[s]) for s in SUBSET_COLORS if s in present]
    if "deleted" not in present:
        legend.append(("(no deleted classes)", None))
    out += _legend(legend)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def summary_svg(groups: list[tuple[str, dict[str, float | None]]], title: str = "A / F / S") -> str:
    """Grouped bars: one group per label, bars for whichever of A, F, S are defined."""
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    out = _frame(title, "", "percent")
    n = max(1, len(groups))
    gw = pw / n
    bw = gw / 4
    for i, (label, vals) in enumerate(groups):
        x0 = LEFT + i * gw + bw / 2
        for j, key in enumerate(("A", "F", "S")):
            v = vals.get(key)
            if v is None:
                continue
            h = ph * v / 100
            out.append(f'<rect x="{_fmt(x0 + j * bw)}" y="{_fmt(TOP + ph - h)}" width="{_fmt(bw * 0.9)}" height="{_fmt(h)}" fill="{METRIC_COLORS[key]}"/>')
        out.append(f'<text x="{_fmt(LEFT + (i + 0.5) * gw)}" y="{TOP + ph + 14}" text-anchor="middle">{escape(label)}</text>')
    out += _legend([(k, METRIC_COLORS[k]) for k in ("A", "F", "S")])
    out.append("</svg>")
    return "\n".join(out) + "\n"


def summary_groups(results_dir) -> list[tuple[str, dict[str, float | None]]]:
    """Bars from a sweep's summary.csv if present, else per-step rows of metrics.csv."""
    d = Path(results_dir)
    if (d / "summary.csv").exists():
        groups = []
        for r in read_csv(d / "summary.csv"):
            groups.append((r["value"], {k: (float(r[k]) if r[k] else None) for k in ("A", "F", "S")}))
        return groups
    steps: dict[int, dict[str, float | None]] = {}
    for r in read_csv(d / "metrics.csv"):
        if r["record"] in ("A", "F", "S"):
            steps.setdefault(int(r["step"]), {})[r["record"]] = float(r["value"])
    return [(f"step {s}", steps[s]) for s in sorted(steps)]
