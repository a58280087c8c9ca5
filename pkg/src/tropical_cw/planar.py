"""Exact planar bisectors (d+1 = 3) and Carlini-Wagner gradient fields.

Points of R^3/R1 are drawn in the chart x3 = 0, i.e. as (x1, x2).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .bisector import IndexQuadruple, build_system, enumerate_components, exact_point
from .errors import DimensionMismatch
from .tropical import locate_sectors, smoothed_trop_dist, smoothed_trop_dist_grad, trop_dist, trop_dist_grad

log = logging.getLogger(__name__)

Pair = tuple[Fraction, Fraction]


@dataclass
class PlanarPiece:
    """Points ``point + t * direction`` for t in [t_lo, t_hi] (None = unbounded)."""

    quadruple: IndexQuadruple
    point: Pair
    direction: Pair
    t_lo: Optional[Fraction]
    t_hi: Optional[Fraction]
    quadruples: list[IndexQuadruple] = field(default_factory=list)

    @property
    def kind(self) -> str:
        unbounded = (self.t_lo is None) + (self.t_hi is None)
        return ("segment", "ray", "line")[unbounded]

    def at(self, t) -> Pair:
        return (self.point[0] + t * self.direction[0], self.point[1] + t * self.direction[1])

    def contains(self, x: Pair) -> bool:
        """Exact membership of a chart point."""
        (p1, p2), (d1, d2) = self.point, self.direction
        if (x[0] - p1) * d2 != (x[1] - p2) * d1:
            return False
        t = (x[0] - p1) / d1 if d1 else (x[1] - p2) / d2
        return (self.t_lo is None or t >= self.t_lo) and (self.t_hi is None or t <= self.t_hi)

    def sample_params(self, count: int) -> list[Fraction]:
        """``count`` distinct rational parameters inside the interval."""
        lo, hi = self.t_lo, self.t_hi
        if lo is not None and hi is not None:
            return [lo + (hi - lo) * Fraction(i, count - 1) for i in range(count)] if count > 1 else [lo]
        if lo is not None:
            return [lo + Fraction(i, 3) for i in range(count)]
        if hi is not None:
            return [hi - Fraction(i, 3) for i in range(count)]
        return [Fraction(i - count // 2, 3) for i in range(count)]

    def to_dict(self) -> dict:
        def s(v):
            return None if v is None else str(v)

        return {
            "label": self.quadruple.label(),
            "quadruples": [q.label() for q in self.quadruples],
            "kind": self.kind,
            "point": [str(v) for v in self.point],
            "direction": [str(v) for v in self.direction],
            "t_lo": s(self.t_lo),
            "t_hi": s(self.t_hi),
        }


def _check_planar(*pts) -> None:
    for p in pts:
        if len(p) != 3:
            raise DimensionMismatch(f"DimensionMismatch: planar routines need d+1 = 3, got {len(p)}")


def _line_key(c: Pair, r: Fraction):
    lead = c[0] if c[0] else c[1]
    return (c[0] / lead, c[1] / lead), r / lead


def _carrier(c: Pair, r: Fraction) -> tuple[Pair, Pair]:
    if c[1]:
        point = (Fraction(0), r / c[1])
    else:
        point = (r / c[0], Fraction(0))
    return point, (-c[1], c[0])


def _interval(system, point: Pair, direction: Pair):
    lo = hi = None
    for cs, rhs in system.weak_rows:
        slope = cs[0] * direction[0] + cs[1] * direction[1]
        slack = rhs - (cs[0] * point[0] + cs[1] * point[1])
        if slope > 0:
            t = slack / slope
            lo = t if lo is None else max(lo, t)
        elif slope < 0:
            t = slack / slope
            hi = t if hi is None else min(hi, t)
        elif slack > 0:
            return None
    if lo is not None and hi is not None and lo > hi:
        return None
    return lo, hi


def bisector_pieces_2d(a, b) -> list[PlanarPiece]:
    """Exact pieces of bis(a, b) in the x3 = 0 chart.

    Pieces from different quadruples that lie on one line and overlap or touch
    are merged (this only happens for non-generic inputs); isolated points
    already covered by a 1-dimensional piece are dropped.
    """
    _check_planar(a, b)
    a = exact_point(a)
    rel = exact_point([bv - av for av, bv in zip(a, exact_point(b))])
    shift = (a[0], a[1])
    if rel == (0, 0, 0):
        log.warning("a == b: every point is equidistant; no pieces emitted")
        return []
    if len(set(rel)) < 3:
        log.warning("repeated coordinates in b - a: the bisector has 2-dimensional parts, only 1-dimensional pieces are returned")
    summary = enumerate_components(rel)
    lines: dict = {}
    points = []
    for q in summary.feasible_quadruples:
        system = build_system(rel, q, compact=True)
        c, r = system.equality
        if not any(c):
            continue
        key = _line_key(c, r)
        point, direction = _carrier(*key)
        iv = _interval(system, point, direction)
        if iv is None:  # pragma: no cover - system was feasible
            continue
        if iv[0] is not None and iv[0] == iv[1]:
            points.append((q, (point[0] + iv[0] * direction[0], point[1] + iv[0] * direction[1])))
            continue
        lines.setdefault(key, []).append((q, iv, point, direction))

    pieces = []
    for key, items in lines.items():
        items.sort(key=lambda it: (it[1][0] is not None, it[1][0] if it[1][0] is not None else 0))
        merged: list[list] = []
        for q, (lo, hi), point, direction in items:
            if merged:
                last = merged[-1]
                lhi = last[2]
                if lhi is None or lo is None or lo <= lhi:
                    last[0].append(q)
                    last[2] = None if (lhi is None or hi is None) else max(lhi, hi)
                    continue
            merged.append([[q], lo, hi, point, direction])
        for qs, lo, hi, point, direction in merged:
            qs = sorted(qs)
            moved = (point[0] + shift[0], point[1] + shift[1])
            pieces.append(PlanarPiece(qs[0], moved, direction, lo, hi, qs))
    for q, pt in points:
        moved = (pt[0] + shift[0], pt[1] + shift[1])
        if not any(p.contains(moved) for p in pieces):
            pieces.append(PlanarPiece(q, moved, (Fraction(1), Fraction(0)), Fraction(0), Fraction(0), [q]))
    pieces.sort(key=lambda p: p.quadruple)
    return pieces


@dataclass(frozen=True)
class Ray:
    origin: tuple[float, float]
    direction: tuple[float, float]


_MAX_DIRS = ((1, 1), (0, -1), (-1, 0))


def hyperplane_segments_2d(apex, kind: str = "max") -> list[Ray]:
    """The three rays of the max- (or min-) tropical hyperplane with this apex.

    For the max kind these are the loci where max(u_i - apex_i) is attained at
    least twice: directions (1, 1), (0, -1), (-1, 0) from the apex in the
    chart.  The min kind is the point reflection of that picture.
    """
    _check_planar(apex)
    if kind not in ("max", "min"):
        raise ValueError(f"kind must be 'max' or 'min', got {kind!r}")
    p = exact_point(apex)
    sign = 1 if kind == "max" else -1
    origin = (p[0], p[1])
    return [Ray(origin, (sign * dx, sign * dy)) for dx, dy in _MAX_DIRS]


# -- gradient fields -------------------------------------------------------------------

L2_PLUS_F = "l2_plus_f"
TROP_PLUS_F = "trop_plus_f"


@dataclass
class GradientField:
    xs: np.ndarray
    ys: np.ndarray
    vectors: np.ndarray  # (ny, nx, 2), NaN where the node sits on a tie
    hinge_active: np.ndarray  # (ny, nx) bool


def _embed(x) -> np.ndarray:
    return np.array([x[0], x[1], 0.0])


def cw_objective_2d(x, a, b, objective: str, origin, lam: float = 1.0, tau: Optional[float] = None) -> float:
    """Distance-to-start term plus ``lam`` times the untargeted hinge.

    The hinge is max(0, d(x, a) ... ) written with logits Z = -distances and
    true class a: f = max(Z_a - Z_b, 0) = max(d(x, b) - d(x, a), 0).
    """
    X = _embed(x)
    A, B, O = _embed(a), _embed(b), _embed(origin)
    if tau is None:
        f = max(trop_dist(X, B) - trop_dist(X, A), 0.0)
    else:
        f = max(smoothed_trop_dist(X, B, tau) - smoothed_trop_dist(X, A, tau), 0.0)
    if objective == L2_PLUS_F:
        dist = float(np.linalg.norm(X[:2] - O[:2]))
    elif objective == TROP_PLUS_F:
        dist = float(trop_dist(X, O))
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return dist + lam * f


def cw_gradient_2d(x, a, b, objective: str, origin, lam: float = 1.0, tau: Optional[float] = None):
    """(negative gradient, hinge_active), or (None, ...) on a tie."""
    X = _embed(x)
    A, B, O = _embed(a), _embed(b), _embed(origin)
    delta = X[:2] - O[:2]
    if objective == L2_PLUS_F:
        norm = float(np.linalg.norm(delta))
        if norm == 0.0:
            return None, False
        g = delta / norm
    elif objective == TROP_PLUS_F:
        if locate_sectors(X, O).tie:
            return None, False
        g = trop_dist_grad(X, O)[:2]
    else:
        raise ValueError(f"unknown objective {objective!r}")
    if tau is None:
        if locate_sectors(X, A).tie or locate_sectors(X, B).tie:
            return None, False
        margin = trop_dist(X, B) - trop_dist(X, A)
        hinge_grad = trop_dist_grad(X, B) - trop_dist_grad(X, A)
    else:
        if np.any(np.abs(np.abs(X - A) - tau) == 0) or np.any(np.abs(np.abs(X - B) - tau) == 0):
            return None, False
        margin = smoothed_trop_dist(X, B, tau) - smoothed_trop_dist(X, A, tau)
        hinge_grad = smoothed_trop_dist_grad(X, B, tau) - smoothed_trop_dist_grad(X, A, tau)
    if margin == 0:
        return None, False
    active = margin > 0
    if active:
        g = g + lam * hinge_grad[:2]
    return -g, active


def cw_gradient_field_2d(
    a,
    b,
    objective: str = L2_PLUS_F,
    viewport=(-3.0, 3.0, -3.0, 3.0),
    resolution: int = 25,
    tau: Optional[float] = None,
    origin=None,
    lam: float = 1.0,
) -> GradientField:
    """Negative CW gradient on a regular grid.

    Two classes are centred at ``a`` (the true class) and ``b``; the attack
    starts at ``origin`` (default ``a``).  Nodes on a tie carry NaN.
    """
    _check_planar(a, b)
    a = np.array([float(v) for v in a]) - float(a[2])
    b = np.array([float(v) for v in b]) - float(b[2])
    origin = a if origin is None else np.array([float(v) for v in origin]) - float(origin[2])
    x0, x1, y0, y1 = viewport
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    vec = np.full((resolution, resolution, 2), np.nan)
    active = np.zeros((resolution, resolution), dtype=bool)
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            g, act = cw_gradient_2d((x, y), a, b, objective, origin, lam, tau)
            if g is not None:
                vec[iy, ix] = g
                active[iy, ix] = act
    return GradientField(xs, ys, vec, active)
