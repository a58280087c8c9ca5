"""Static SVG figures of planar bisectors, tropical hyperplanes and gradient fields."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional
from xml.sax.saxutils import escape

import numpy as np

from .errors import IoError
from .planar import GradientField, PlanarPiece, Ray, bisector_pieces_2d, hyperplane_segments_2d

BISECTOR_STYLE = {"stroke": "#d62728", "stroke-width": "2.5"}
HYPERPLANE_STYLE = {"stroke": "#1f77b4", "stroke-width": "1.2", "stroke-dasharray": "5,3"}
ARROW_STYLE = {"stroke": "#444444", "stroke-width": "0.8"}


@dataclass
class Segment:
    """A drawable piece: start point plus direction with optional open ends."""

    start: tuple[float, float]
    direction: tuple[float, float]
    t_lo: Optional[float]
    t_hi: Optional[float]
    role: str  # "bisector" or "hyperplane"
    label: str = ""

    @classmethod
    def from_piece(cls, piece: PlanarPiece) -> "Segment":
        f = lambda v: None if v is None else float(v)
        return cls(
            tuple(float(v) for v in piece.point),
            tuple(float(v) for v in piece.direction),
            f(piece.t_lo),
            f(piece.t_hi),
            "bisector",
            piece.quadruple.label(),
        )

    @classmethod
    def from_ray(cls, ray: Ray) -> "Segment":
        return cls(tuple(float(v) for v in ray.origin), tuple(float(v) for v in ray.direction), 0.0, None, "hyperplane")


@dataclass
class SceneSpec:
    viewport: tuple[float, float, float, float] = (-3.0, 3.0, -3.0, 3.0)
    points: list[tuple[str, float, float]] = field(default_factory=list)
    segments: list[Segment] = field(default_factory=list)
    arrows: list[tuple[float, float, float, float]] = field(default_factory=list)
    width: int = 480
    height: int = 480

    def to_dict(self) -> dict:
        return {
            "viewport": list(self.viewport),
            "points": [list(p) for p in self.points],
            "segments": [
                {
                    "role": s.role,
                    "label": s.label,
                    "start": list(s.start),
                    "direction": list(s.direction),
                    "t_lo": s.t_lo,
                    "t_hi": s.t_hi,
                }
                for s in self.segments
            ],
            "arrows": [list(a) for a in self.arrows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def fit_viewport(self, margin: float = 1.0) -> None:
        """Grow the viewport until it holds every point, apex and finite endpoint."""
        xs, ys = [], []
        for _, x, y in self.points:
            xs.append(x)
            ys.append(y)
        for s in self.segments:
            for t in (s.t_lo, s.t_hi):
                if t is not None:
                    xs.append(s.start[0] + t * s.direction[0])
                    ys.append(s.start[1] + t * s.direction[1])
        if not xs:
            return
        x0, x1, y0, y1 = self.viewport
        self.viewport = (
            min(x0, min(xs) - margin),
            max(x1, max(xs) + margin),
            min(y0, min(ys) - margin),
            max(y1, max(ys) + margin),
        )


def _clip(seg: Segment, viewport) -> Optional[tuple[float, float]]:
    """Parameter range of ``seg`` inside the viewport box (Liang-Barsky)."""
    x0, x1, y0, y1 = viewport
    lo = -math.inf if seg.t_lo is None else seg.t_lo
    hi = math.inf if seg.t_hi is None else seg.t_hi
    (px, py), (dx, dy) = seg.start, seg.direction
    for p, q in ((-dx, px - x0), (dx, x1 - px), (-dy, py - y0), (dy, y1 - py)):
        if p == 0:
            if q < 0:
                return None
            continue
        t = q / p
        if p < 0:
            lo = max(lo, t)
        else:
            hi = min(hi, t)
    if lo > hi:
        return None
    return lo, hi


def _fmt(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _attrs(style: dict) -> str:
    return " ".join(f'{k}="{v}"' for k, v in sorted(style.items()))


def to_svg(scene: SceneSpec) -> str:
    x0, x1, y0, y1 = scene.viewport
    sx = scene.width / (x1 - x0)
    sy = scene.height / (y1 - y0)

    def px(x, y):
        return _fmt((x - x0) * sx), _fmt((y1 - y) * sy)

    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{scene.width}" height="{scene.height}" '
        f'viewBox="0 0 {scene.width} {scene.height}">',
        "<defs>",
        *(
            f'<marker id="open-{role}" viewBox="0 0 10 10" refX="8" refY="5" markerWidth="6" markerHeight="6" '
            f'orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="{style["stroke"]}"/></marker>'
            for role, style in (("bisector", BISECTOR_STYLE), ("hyperplane", HYPERPLANE_STYLE))
        ),
        '<marker id="field" viewBox="0 0 10 10" refX="8" refY="5" markerWidth="4" markerHeight="4" orient="auto">'
        '<path d="M0,0 L10,5 L0,10 z" fill="#444444"/></marker>',
        "</defs>",
        f'<rect x="0" y="0" width="{scene.width}" height="{scene.height}" fill="white" stroke="black"/>',
    ]
    for bx, by, dx, dy in scene.arrows:
        ax, ay = px(bx, by)
        cx, cy = px(bx + dx, by + dy)
        out.append(f'<line x1="{ax}" y1="{ay}" x2="{cx}" y2="{cy}" {_attrs(ARROW_STYLE)} marker-end="url(#field)"/>')
    for seg in sorted(scene.segments, key=lambda s: s.role != "hyperplane"):
        span = _clip(seg, scene.viewport)
        if span is None:
            continue
        lo, hi = span
        (p0, p1), (d0, d1) = seg.start, seg.direction
        ax, ay = px(p0 + lo * d0, p1 + lo * d1)
        cx, cy = px(p0 + hi * d0, p1 + hi * d1)
        style = BISECTOR_STYLE if seg.role == "bisector" else HYPERPLANE_STYLE
        extra = ""
        if seg.t_lo is None:
            extra += f' marker-start="url(#open-{seg.role})"'
        if seg.t_hi is None:
            extra += f' marker-end="url(#open-{seg.role})"'
        if lo == hi:
            out.append(f'<circle cx="{ax}" cy="{ay}" r="3" fill="{style["stroke"]}"/>')
            continue
        title = f"<title>{escape(seg.label)}</title>" if seg.label else ""
        out.append(f'<line x1="{ax}" y1="{ay}" x2="{cx}" y2="{cy}" {_attrs(style)} fill="none"{extra}>{title}</line>')
    for label, x, y in scene.points:
        cx, cy = px(x, y)
        out.append(f'<circle cx="{cx}" cy="{cy}" r="4" fill="black"/>')
        out.append(f'<text x="{cx}" y="{cy}" dx="6" dy="-6" font-family="sans-serif" font-size="12">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_svg(scene: SceneSpec, path) -> Path:
    path = Path(path)
    try:
        path.write_text(to_svg(scene), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"IoError: cannot write {path}: {exc}") from exc
    return path


def bisector_scene(a, b, viewport=(-3.0, 3.0, -3.0, 3.0), hyperplanes: bool = True) -> tuple[SceneSpec, list[PlanarPiece]]:
    """Scene with the bisector of ``a`` and ``b`` in red and max-hyperplanes at both points."""
    pieces = bisector_pieces_2d(a, b)
    scene = SceneSpec(viewport=tuple(viewport))
    for name, p in (("a", a), ("b", b)):
        vals = [float(v) for v in p]
        scene.points.append((name, vals[0] - vals[2], vals[1] - vals[2]))
        if hyperplanes:
            scene.segments.extend(Segment.from_ray(r) for r in hyperplane_segments_2d(p, "max"))
    scene.segments.extend(Segment.from_piece(piece) for piece in pieces)
    scene.fit_viewport()
    return scene, pieces


def add_field(scene: SceneSpec, grad: GradientField, length: float = 0.2) -> None:
    """Attach unit-length-scaled arrows for every tie-free node."""
    for iy, y in enumerate(grad.ys):
        for ix, x in enumerate(grad.xs):
            v = grad.vectors[iy, ix]
            if np.any(np.isnan(v)):
                continue
            norm = float(np.hypot(*v))
            if norm == 0.0:
                continue
            scale = length / norm
            scene.arrows.append((float(x), float(y), float(v[0]) * scale, float(v[1]) * scale))
