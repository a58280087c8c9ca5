"""Exact rational linear feasibility.

Systems are tiny (a handful of free variables, a few dozen rows), so the
solver favours exactness and cycling safety over raw speed: a two-phase
tableau simplex with Bland's rule, run entirely on Python integers.

Every tableau row is stored as a list of integers that is only meaningful up
to a positive scale factor.  Pivoting multiplies a row by the (positive)
pivot element and subtracts a multiple of the pivot row, then divides out the
gcd.  Rows that have a zero in the pivot column are left untouched, so no
common denominator ever has to be propagated through the whole tableau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .errors import NonFiniteInput

Rational = Fraction

FEASIBLE = "Feasible"
INFEASIBLE = "Infeasible"


def rational_from_float(x: float) -> Fraction:
    """Return the exact (dyadic) rational value of a binary64 number."""
    if not math.isfinite(x):
        raise NonFiniteInput(f"NonFiniteInput: {x!r} is not finite")
    return Fraction(float(x))


def as_rational(v) -> Fraction:
    """Coerce ints, Fractions, floats (exactly) and decimal strings."""
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, float):
        return rational_from_float(v)
    if isinstance(v, str):
        return Fraction(v.strip())
    # numpy scalars and anything else float-like
    return rational_from_float(float(v))


Row = tuple[tuple[Fraction, ...], Fraction]


def _row(coeffs, rhs, n: int) -> Row:
    cs = tuple(as_rational(c) for c in coeffs)
    if len(cs) != n:
        raise ValueError(f"row has {len(cs)} coefficients, expected {n}")
    return cs, as_rational(rhs)


@dataclass(frozen=True)
class LinearSystem:
    """``equality`` holds as ``coeff . x == rhs``; weak rows mean
    ``coeff . x >= rhs``; strict rows mean ``coeff . x > rhs``."""

    num_vars: int
    equality: Optional[Row]
    weak_rows: tuple[Row, ...] = ()
    strict_rows: tuple[Row, ...] = ()

    @classmethod
    def build(cls, num_vars, equality=None, weak_rows=(), strict_rows=()):
        eq = None if equality is None else _row(equality[0], equality[1], num_vars)
        return cls(
            num_vars,
            eq,
            tuple(_row(c, r, num_vars) for c, r in weak_rows),
            tuple(_row(c, r, num_vars) for c, r in strict_rows),
        )

    def satisfied_by(self, x: Sequence[Fraction]) -> bool:
        def dot(cs):
            return sum((c * v for c, v in zip(cs, x) if c), Fraction(0))

        if self.equality is not None and dot(self.equality[0]) != self.equality[1]:
            return False
        if any(dot(cs) < r for cs, r in self.weak_rows):
            return False
        return all(dot(cs) > r for cs, r in self.strict_rows)


@dataclass(frozen=True)
class FeasibilityResult:
    status: str
    witness: Optional[tuple[Fraction, ...]] = field(default=None)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def _int_row(coeffs: Sequence[Fraction], rhs: Fraction) -> tuple[list[int], int, int]:
    """Scale a rational row to integers; also return the (positive) multiplier."""
    den = rhs.denominator
    for c in coeffs:
        if c.denominator != 1:
            den = den * c.denominator // math.gcd(den, c.denominator)
    return [int(c * den) for c in coeffs], int(rhs * den), den


def _reduce(row: list[int]) -> list[int]:
    g = math.gcd(*row)
    if g > 1:
        return [v // g for v in row]
    return row


class _Tableau:
    """Integer tableau over non-negative columns; the last entry of each row
    is the right-hand side, which is kept non-negative."""

    def __init__(self, rows: list[list[int]], basis: list[int]):
        self.rows = rows
        self.basis = basis  # column index; negative ids mark artificials

    def pivot(self, pr: int, col: int, extra: list[list[int]]) -> None:
        prow = self.rows[pr]
        p = prow[col]
        for i, row in enumerate(self.rows):
            if i == pr:
                continue
            a = row[col]
            if a:
                self.rows[i] = _reduce([p * u - a * v for u, v in zip(row, prow)])
        for k, row in enumerate(extra):
            a = row[col]
            if a:
                extra[k] = _reduce([p * u - a * v for u, v in zip(row, prow)])
        self.basis[pr] = col

    def leaving_row(self, col: int) -> Optional[int]:
        best = None
        for i, row in enumerate(self.rows):
            a = row[col]
            if a <= 0:
                continue
            if best is None:
                best = i
                continue
            # compare row[-1]/a against best ratio, Bland tie-break on basis index
            b = self.rows[best]
            lhs = row[-1] * b[col]
            rhs = b[-1] * a
            if lhs < rhs or (lhs == rhs and self._bkey(i) < self._bkey(best)):
                best = i
        return best

    def _bkey(self, i: int) -> int:
        # artificials rank before every real column so they leave first
        return self.basis[i]

    def run(self, obj: list[int], allowed: int) -> bool:
        """Minimise; ``obj`` holds reduced costs. Returns False if unbounded."""
        holder = [obj]
        while True:
            o = holder[0]
            col = next((j for j in range(allowed) if o[j] < 0), None)
            if col is None:
                obj[:] = o
                return True
            pr = self.leaving_row(col)
            if pr is None:
                obj[:] = o
                return False
            self.pivot(pr, col, holder)

    def value(self, col: int) -> Fraction:
        for i, b in enumerate(self.basis):
            if b == col:
                row = self.rows[i]
                return Fraction(row[-1], row[col])
        return Fraction(0)


def solve_feasibility(system: LinearSystem) -> FeasibilityResult:
    """Decide whether ``system`` has a rational solution.

    Strict rows are handled by maximising a common slack ``t`` (bounded by
    one) subject to ``coeff . x >= rhs + t``; the system is strictly feasible
    iff the optimum is positive.
    """
    n = system.num_vars
    has_strict = bool(system.strict_rows)

    # column layout: x+ and x- for each free variable, then t, then slacks
    t_col = 2 * n
    first_slack = 2 * n + (1 if has_strict else 0)
    constraints = []  # (coeffs, rhs, kind)
    if system.equality is not None:
        constraints.append((system.equality[0], system.equality[1], "eq"))
    constraints.extend((cs, r, "ge") for cs, r in system.weak_rows)
    constraints.extend((cs, r, "gt") for cs, r in system.strict_rows)
    if has_strict:
        constraints.append((None, Fraction(1), "tbound"))
    n_slack = sum(1 for s in constraints if s[2] != "eq")
    ncols = first_slack + n_slack

    rows: list[list[int]] = []
    basis: list[int] = []
    slack = first_slack
    for coeffs, rhs, kind in constraints:
        row = [0] * (ncols + 1)
        if kind == "tbound":
            row[t_col] = 1
            row[slack] = 1
            row[-1] = 1
            rows.append(row)
            basis.append(slack)
            slack += 1
            continue
        ints, r, scale = _int_row(coeffs, rhs)
        for v, c in enumerate(ints):
            if c:
                row[2 * v] = c
                row[2 * v + 1] = -c
        if kind == "gt":
            # coeff.x - t >= rhs, with the integer scaling applied to t as well
            row[t_col] = -scale
        row[-1] = r
        if kind == "eq":
            if r < 0:
                row = [-v for v in row]
            rows.append(_reduce(row))
            basis.append(-1 - len(rows))
            continue
        # slack is rescaled so its integer coefficient is exactly -1
        row[slack] = -1
        if r <= 0:
            row = [-v for v in row]
            rows.append(row)
            basis.append(slack)
        else:
            rows.append(row)
            basis.append(-1 - len(rows))
        slack += 1

    # drop identically-zero rows; 0 = positive is infeasible outright
    kept_rows, kept_basis = [], []
    for row, b in zip(rows, basis):
        if not any(row[:-1]):
            if row[-1] != 0:
                return FeasibilityResult(INFEASIBLE)
            continue
        kept_rows.append(row)
        kept_basis.append(b)
    tab = _Tableau(kept_rows, kept_basis)

    art = [i for i, b in enumerate(tab.basis) if b < 0]
    if art:
        obj = [0] * (ncols + 1)
        for i in art:
            row = tab.rows[i]
            obj = [o - v for o, v in zip(obj, row)]
        tab.run(obj, ncols)
        if obj[-1] < 0:
            return FeasibilityResult(INFEASIBLE)
        _expel_artificials(tab, ncols)

    if has_strict:
        obj = [0] * (ncols + 1)
        obj[t_col] = -1
        for i, b in enumerate(tab.basis):
            if b == t_col:
                c = tab.rows[i][t_col]
                obj = [c * o + v for o, v in zip(obj, tab.rows[i])]
                break
        if not tab.run(obj, ncols):  # pragma: no cover - t <= 1 bounds it
            raise RuntimeError("unbounded slack maximisation")
        if tab.value(t_col) <= 0:
            return FeasibilityResult(INFEASIBLE)

    witness = tuple(tab.value(2 * v) - tab.value(2 * v + 1) for v in range(n))
    return FeasibilityResult(FEASIBLE, witness)


def _expel_artificials(tab: _Tableau, ncols: int) -> None:
    """Pivot zero-level artificials out of the basis, dropping redundant rows."""
    i = 0
    while i < len(tab.rows):
        if tab.basis[i] >= 0:
            i += 1
            continue
        row = tab.rows[i]
        col = next((j for j in range(ncols) if row[j]), None)
        if col is None:
            del tab.rows[i]
            del tab.basis[i]
            continue
        if row[col] < 0:
            tab.rows[i] = [-v for v in row]  # rhs is 0, so negation is harmless
        tab.pivot(i, col, [])
        i += 1
