"""
Turns run records into a text summary table and SVG plots via Jinja2.

The SVG has two panels: the track (boundaries, optional envelope block
outlines, plant path colored by speed) and a g-g diagram with the front and
rear friction limits as dashed circles.
"""

from __future__ import annotations

import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from jinja2 import Template

from .envelope import SpatialEnvelope
from .road import RoadBoundary

MAX_PATH_POINTS = 2000
MAX_GG_POINTS = 1500

SVG_TMPL = Template("""<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{{ width }}" height="{{ height }}" viewBox="0 0 {{ width }} {{ height }}">
  <rect x="0" y="0" width="{{ width }}" height="{{ height }}" fill="#ffffff"/>
  <g id="track">
    <polyline class="boundary" points="{{ left }}" fill="none" stroke="#222" stroke-width="1.2"/>
    <polyline class="boundary" points="{{ right }}" fill="none" stroke="#222" stroke-width="1.2"/>
{%- for poly in blocks %}
    <polygon class="block" points="{{ poly }}" fill="#4a90d9" fill-opacity="0.08" stroke="#4a90d9" stroke-width="0.6"/>
{%- endfor %}
{%- for seg in path %}
    <line class="path" x1="{{ seg.x1 }}" y1="{{ seg.y1 }}" x2="{{ seg.x2 }}" y2="{{ seg.y2 }}" stroke="{{ seg.color }}" stroke-width="2"/>
{%- endfor %}
  </g>
{%- if gg %}
  <g id="gg">
    <text x="{{ gg.cx }}" y="{{ gg.top }}" font-family="sans-serif" font-size="12" text-anchor="middle">g-g (m/s²)</text>
    <line x1="{{ gg.cx - gg.r_axis }}" y1="{{ gg.cy }}" x2="{{ gg.cx + gg.r_axis }}" y2="{{ gg.cy }}" stroke="#999" stroke-width="0.5"/>
    <line x1="{{ gg.cx }}" y1="{{ gg.cy - gg.r_axis }}" x2="{{ gg.cx }}" y2="{{ gg.cy + gg.r_axis }}" stroke="#999" stroke-width="0.5"/>
    <circle class="limit-front" cx="{{ gg.cx }}" cy="{{ gg.cy }}" r="{{ gg.r_front }}" fill="none" stroke="#d62728" stroke-dasharray="4 3" data-radius="{{ gg.mu_f_g }}"/>
    <circle class="limit-rear" cx="{{ gg.cx }}" cy="{{ gg.cy }}" r="{{ gg.r_rear }}" fill="none" stroke="#1f77b4" stroke-dasharray="4 3" data-radius="{{ gg.mu_r_g }}"/>
{%- for p in gg.points %}
    <circle class="sample" cx="{{ p[0] }}" cy="{{ p[1] }}" r="1.2" fill="#333" fill-opacity="0.5"/>
{%- endfor %}
  </g>
{%- endif %}
{%- if title %}
  <text x="10" y="18" font-family="sans-serif" font-size="14">{{ title }}</text>
{%- endif %}
</svg>
""")

TABLE_TMPL = Template("""{{ "%-16s %-10s %10s %18s %16s %10s" | format("scenario", "status", "time [s]", "solve [ms]", "max acc / mu·g", "violations") }}
{%- for r in rows %}
{{ "%-16s %-10s %10s %18s %16s %10d" | format(r.name, r.status, r.time, r.solve, r.accel, r.violations) }}
{%- endfor %}
""")


# ---------------------------
# Helpers
# ---------------------------

def _speed_color(t: float) -> str:
    """Blue (slow) to red (fast) through green."""
    t = min(max(t, 0.0), 1.0)
    hue = 240.0 * (1.0 - t)
    return f"hsl({hue:.0f},80%,45%)"


def _fmt(points: np.ndarray) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in points)


class _Frame:
    """World (m) to panel pixels, y up."""

    def __init__(self, bbox: Tuple[float, float, float, float], width: float, height: float, pad: float = 20.0):
        x0, y0, x1, y1 = bbox
        self.scale = min((width - 2 * pad) / max(x1 - x0, 1e-9), (height - 2 * pad) / max(y1 - y0, 1e-9))
        self.x0, self.y1, self.pad = x0, y1, pad

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.column_stack([self.pad + (pts[:, 0] - self.x0) * self.scale, self.pad + (self.y1 - pts[:, 1]) * self.scale])


def _decimate(n: int, limit: int) -> np.ndarray:
    return np.arange(0, n, max(1, int(math.ceil(n / limit))))


# ---------------------------
# SVG
# ---------------------------

def render_svg(
    record: Optional[Any],
    road: RoadBoundary,
    envelope: Optional[SpatialEnvelope] = None,
    *,
    show_blocks: bool = True,
    width: int = 900,
    height: int = 600,
    gg_width: int = 300,
    title: str | None = None,
) -> str:
    """Track plot plus g-g diagram; `record` may be None for a bare track."""
    has_gg = record is not None and len(record.times) > 0
    track_w = width - (gg_width if has_gg else 0)
    frame = _Frame(road.bounding_box(pad=2.0), track_w, height)

    blocks: List[str] = []
    if envelope is not None and show_blocks:
        blocks = [_fmt(frame(b.outline(64))) for b in envelope.blocks]

    path: List[Dict[str, Any]] = []
    gg = None
    if has_gg:
        idx = _decimate(len(record.times), MAX_PATH_POINTS)
        pts = frame(record.states[idx, :2])
        speed = record.speed[idx]
        lo, hi = float(speed.min()), float(speed.max())
        span = hi - lo
        for i in range(len(pts) - 1):
            t = 0.0 if span < 1e-9 else (0.5 * (speed[i] + speed[i + 1]) - lo) / span
            path.append({"x1": f"{pts[i, 0]:.2f}", "y1": f"{pts[i, 1]:.2f}", "x2": f"{pts[i + 1, 0]:.2f}", "y2": f"{pts[i + 1, 1]:.2f}", "color": _speed_color(t)})

        mu_f_g, mu_r_g = record.mu_f * record.g, record.mu_r * record.g
        r_axis = 0.5 * gg_width - 30
        a_max = max(mu_f_g, mu_r_g, float(record.total_acceleration.max())) * 1.1
        k = r_axis / a_max
        cx, cy = track_w + 0.5 * gg_width, 0.5 * height
        j = _decimate(len(record.times), MAX_GG_POINTS)
        gg = {
            "cx": round(cx, 2),
            "cy": round(cy, 2),
            "top": round(cy - r_axis - 10, 2),
            "r_axis": round(r_axis, 2),
            "r_front": f"{mu_f_g * k:.3f}",
            "r_rear": f"{mu_r_g * k:.3f}",
            "mu_f_g": f"{mu_f_g:.4f}",
            "mu_r_g": f"{mu_r_g:.4f}",
            "points": [(f"{cx + a * k:.2f}", f"{cy - b * k:.2f}") for a, b in zip(record.a_lat[j], record.a_long[j])],
        }

    return SVG_TMPL.render(
        width=width,
        height=height,
        left=_fmt(frame(road.left)),
        right=_fmt(frame(road.right)),
        blocks=blocks,
        path=path,
        gg=gg,
        title=title or (record.name if record is not None else None),
    )


# ---------------------------
# Summary
# ---------------------------

def summarize(records: Sequence[Any]) -> Tuple[str, Dict[str, Any]]:
    """Per-run table rows as text plus the same numbers as a JSON-ready dict."""
    if not records:
        raise ValueError("summarize needs at least one run record")
    rows, data = [], {}
    for rec in records:
        m, t = rec.metrics(), rec.timing()
        done = m["completion_time"]
        rows.append(
            {
                "name": rec.name,
                "status": m["status"],
                "time": f"{done:.2f}" if done is not None else "-",
                "solve": f"{t['solve_time_mean_ms']:.1f} ± {t['solve_time_std_ms']:.1f}",
                "accel": f"{m['max_total_accel']:.2f} / {m['accel_budget']:.2f}",
                "violations": m["violations"],
            }
        )
        data[rec.name] = {**m, **t}
    return TABLE_TMPL.render(rows=rows), data
