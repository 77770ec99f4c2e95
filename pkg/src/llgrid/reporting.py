"""Artifact emission: atomic files, CSV/JSON reports, and a dependency-free SVG.

Every write goes through a temp file in the target directory followed by an
atomic rename, so interrupted runs never leave partial files at final paths.
Floats are serialized with repr (shortest round-trip form), which makes
reruns of deterministic experiments byte-identical.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

__version__ = "0.1.0"


def atomic_write_text(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(value) -> str:
    """Round-trip text form for scalars."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_json(path: str, payload: dict):
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path: str, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path: str):
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    return header, rows


def fit_line(xs, ys):
    """Least-squares line fit; returns (slope, intercept, r_squared)."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size < 2:
        return 0.0, float(y.mean() if y.size else 0.0), 0.0
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


# ---------------------------------------------------------------------------
# Minimal SVG line chart (polyline + axes + text, no renderer dependency)
# ---------------------------------------------------------------------------

def svg_line_chart(xs, ys, xlabel: str, ylabel: str, title: str,
                   annotation: str = "", width: int = 640, height: int = 420) -> str:
    xs = [float(v) for v in xs]
    ys = [float(v) for v in ys]
    margin = 64
    plot_w, plot_h = width - 2 * margin, height - 2 * margin

    def span(vals):
        lo, hi = min(vals), max(vals)
        if hi == lo:
            lo, hi = lo - 1.0, hi + 1.0
        pad = 0.05 * (hi - lo)
        return lo - pad, hi + pad

    x0, x1 = span(xs) if xs else (0.0, 1.0)
    y0, y1 = span(ys) if ys else (0.0, 1.0)

    def px(x):
        return margin + (x - x0) / (x1 - x0) * plot_w

    def py(y):
        return height - margin - (y - y0) / (y1 - y0) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="monospace" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 16}" text-anchor="middle" '
        f'font-family="monospace" font-size="12">{xlabel}</text>',
        f'<text x="18" y="{height / 2:.1f}" text-anchor="middle" '
        f'font-family="monospace" font-size="12" '
        f'transform="rotate(-90 18 {height / 2:.1f})">{ylabel}</text>',
    ]
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        parts.append(f'<line x1="{px(xv):.1f}" y1="{height - margin}" '
                     f'x2="{px(xv):.1f}" y2="{height - margin + 5}" stroke="black"/>')
        parts.append(f'<text x="{px(xv):.1f}" y="{height - margin + 18}" '
                     f'text-anchor="middle" font-family="monospace" '
                     f'font-size="10">{xv:.3g}</text>')
        parts.append(f'<line x1="{margin - 5}" y1="{py(yv):.1f}" '
                     f'x2="{margin}" y2="{py(yv):.1f}" stroke="black"/>')
        parts.append(f'<text x="{margin - 8}" y="{py(yv) + 3:.1f}" '
                     f'text-anchor="end" font-family="monospace" '
                     f'font-size="10">{yv:.3g}</text>')
    if xs:
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f5fbf" '
                     f'stroke-width="1.5"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" '
                         f'fill="#1f5fbf"/>')
    if annotation:
        parts.append(f'<text x="{width - margin}" y="{margin - 8}" '
                     f'text-anchor="end" font-family="monospace" '
                     f'font-size="12">{annotation}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    """Ledger of one experiment run: hash, artifacts, timings, verdict summary."""

    config_hash: str
    tool_version: str = __version__
    artifacts: dict = field(default_factory=dict)
    wall_times: dict = field(default_factory=dict)
    passfail: dict = field(default_factory=dict)

    def add_artifact(self, name: str, path: str):
        self.artifacts[name] = os.path.abspath(path)

    def validate(self):
        missing = [p for p in self.artifacts.values() if not os.path.exists(p)]
        if missing:
            raise FileNotFoundError(f"manifest lists missing artifacts: {missing}")

    def write(self, path: str):
        self.validate()
        write_json(path, {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "artifacts": self.artifacts,
            "wall_times": self.wall_times,
            "passfail": self.passfail,
        })
