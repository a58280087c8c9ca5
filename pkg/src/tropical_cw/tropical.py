"""Tropical projective torus, tropical metric and its (sub)gradients.

Functions accept either sequences of exact rationals (``Fraction``/``int``),
which are processed with Python arithmetic and stay exact, or float numpy
arrays, which take a vectorised binary64 path.  Indices are 0-based.
"""

from __future__ import annotations

from fractions import Fraction
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, DimensionTooSmall, InvalidThreshold

Vector = Union[Sequence[Fraction], np.ndarray]


def _is_float_array(v) -> bool:
    return isinstance(v, np.ndarray) and v.dtype != object


def _check_dims(x, y) -> None:
    if len(x) != len(y):
        raise DimensionMismatch(f"DimensionMismatch: {len(x)} vs {len(y)}")


def _diff(x, y):
    _check_dims(x, y)
    if _is_float_array(x) or _is_float_array(y):
        return np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return [a - b for a, b in zip(x, y)]


def normalize(raw: Vector):
    """Canonical torus representative: subtract the last coordinate."""
    if len(raw) < 2:
        raise DimensionTooSmall("DimensionTooSmall: need at least 2 coordinates")
    if _is_float_array(raw):
        return raw - raw[-1]
    last = raw[-1]
    return tuple(v - last for v in raw)


def trop_dist(x: Vector, y: Vector):
    """max_i(x_i - y_i) - min_i(x_i - y_i)."""
    d = _diff(x, y)
    return max(d) - min(d)


class SectorLocation(NamedTuple):
    max_index: int
    min_index: int
    tie: bool


def _locate(d) -> SectorLocation:
    hi, lo = max(d), min(d)
    k = l = -1
    nk = nl = 0
    for idx, v in enumerate(d):
        if v == hi:
            nk += 1
            if k < 0:
                k = idx
        if v == lo:
            nl += 1
            if l < 0:
                l = idx
    return SectorLocation(k, l, nk > 1 or nl > 1)


def locate_sectors(u: Vector, x: Vector) -> SectorLocation:
    """Sector indices of ``u`` for the hyperplanes with apex ``x``.

    ``max_index``/``min_index`` are the arg-max/arg-min of ``u - x`` (smallest
    index on ties); ``tie`` is set when either extremum is attained twice.
    """
    d = _diff(u, x)
    if _is_float_array(d):
        k, l = int(np.argmax(d)), int(np.argmin(d))
        tie = int(np.count_nonzero(d == d[k])) > 1 or int(np.count_nonzero(d == d[l])) > 1
        return SectorLocation(k, l, tie)
    return _locate(d)


def indicator_pair(u: Vector, x: Vector) -> tuple[np.ndarray, np.ndarray]:
    """The max/min indicator vectors (unit vectors e_k and e_l)."""
    loc = locate_sectors(u, x)
    n = len(u)
    g_max = np.zeros(n, dtype=int)
    g_min = np.zeros(n, dtype=int)
    g_max[loc.max_index] = 1
    g_min[loc.min_index] = 1
    return g_max, g_min


def trop_dist_grad(u: Vector, x: Vector) -> np.ndarray:
    """Gradient of ``trop_dist(u, x)`` in ``u``: e_k - e_l.

    At ties this is the smallest-index subgradient; a constant ``u - x``
    yields the zero vector.
    """
    loc = locate_sectors(u, x)
    g = np.zeros(len(u))
    g[loc.max_index] += 1.0
    g[loc.min_index] -= 1.0
    return g


def softmin_probs(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(-(z - z.min()))
    return e / e.sum()


def softmin_jacobian(z) -> np.ndarray:
    """d p_k / d z_j = -p_k (delta_kj - p_j).

    The leading minus sign is what distinguishes softmin from softmax; it is
    pinned by agreement with finite differences of ``softmin_probs``.
    """
    p = softmin_probs(z)
    return -(np.diag(p) - np.outer(p, p))


def _check_tau(tau) -> None:
    if not tau > 0:
        raise InvalidThreshold(f"InvalidThreshold: tau must be > 0, got {tau!r}")


def smoothed_trop_dist(x: Vector, w: Vector, tau):
    """sum_i (x_i - w_i - tau)^+  -  sum_i (x_i - w_i + tau)^-."""
    _check_tau(tau)
    d = _diff(x, w)
    if _is_float_array(d):
        return float(np.maximum(d - tau, 0.0).sum() - np.minimum(d + tau, 0.0).sum())
    return sum(max(v - tau, 0) for v in d) - sum(min(v + tau, 0) for v in d)


def smoothed_trop_dist_grad(x: Vector, w: Vector, tau) -> np.ndarray:
    """Gradient in ``x``: ``[d > tau] - [d < -tau]`` with ``d = x - w``.

    Exactly on the hinge (``|d_i| == tau``) the contribution is 0.
    """
    _check_tau(tau)
    d = _diff(x, w)
    if not _is_float_array(d):
        return np.array([(v > tau) - (v < -tau) for v in d], dtype=float)
    return (d > tau).astype(float) - (d < -tau).astype(float)
