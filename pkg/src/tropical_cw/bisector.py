"""Linear pieces of the tropical bisector bis(0, b).

A piece S(i, j, k, l) collects the points x where the maximum of
``x_m - x_n`` is attained at (i, j) and the maximum of
``(x_m - b_m) - (x_n - b_n)`` at (k, l), with both maxima equal.  Each piece
is a polyhedron; it is counted when the corresponding linear system is
feasible, which is decided exactly by :mod:`tropical_cw.rational_lp`.

Indices are 0-based in the API; ``IndexQuadruple.label`` renders the 1-based
form used in the literature.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations, permutations, product
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import BadDimension, BadQuadruple, NonGenericInput
from .rational_lp import LinearSystem, as_rational, rational_from_float, solve_feasibility
from .tropical import normalize, trop_dist

log = logging.getLogger(__name__)

WEAK = "weak"
STRICT = "strict"


class IndexQuadruple(NamedTuple):
    i: int
    j: int
    k: int
    l: int

    def label(self) -> str:
        return "S({},{},{},{})".format(*(v + 1 for v in self))

    def paired(self) -> "IndexQuadruple":
        """The partner piece (l, k, j, i), an affine image of this one."""
        return IndexQuadruple(self.l, self.k, self.j, self.i)

    def validate(self, dplus1: int) -> None:
        if not all(0 <= v < dplus1 for v in self):
            raise BadQuadruple(f"BadQuadruple: {tuple(self)} out of range for d+1={dplus1}")
        if self.i == self.j or self.k == self.l:
            raise BadQuadruple(f"BadQuadruple: {tuple(self)} needs i != j and k != l")


def all_quadruples(dplus1: int) -> list[IndexQuadruple]:
    """Every valid quadruple, in lexicographic order."""
    pairs = list(permutations(range(dplus1), 2))
    return [IndexQuadruple(i, j, k, l) for (i, j), (k, l) in product(pairs, pairs)]


def exact_point(b) -> tuple[Fraction, ...]:
    """Normalise ``b`` to an exact rational representative with b_last = 0."""
    return normalize(tuple(as_rational(v) for v in b))


def build_system(b, q: IndexQuadruple, *, compact: bool = False, strict: bool = False) -> LinearSystem:
    """The linear system cutting out S(q) for bis(0, b).

    Variables are x_1..x_d; the last coordinate is pinned to 0.  The default
    form lists every pairwise comparison (m, n), dropping the m = n rows and
    the row comparing the defining pair with itself.  ``compact=True`` states
    the same set through arg-max/arg-min rows only (x_i >= x_m, x_m >= x_j
    and likewise for x - b), which is O(d) rows instead of O(d^2).
    ``strict=True`` requires every inequality row to hold strictly.
    """
    b = exact_point(b)
    n = len(b)
    q = IndexQuadruple(*q)
    q.validate(n)
    i, j, k, l = q
    d = n - 1

    def diff_row(p, r, s, t):
        # coefficient vector of x_p - x_r - x_s + x_t over the free variables
        cs = [0] * n
        cs[p] += 1
        cs[r] -= 1
        cs[s] -= 1
        cs[t] += 1
        return cs[:d]

    equality = (diff_row(i, j, k, l), b[l] - b[k])
    rows = []
    if compact:
        for m in range(n):
            if m != i:
                rows.append((_unit_diff(i, m, n), Fraction(0)))
            if m != j:
                rows.append((_unit_diff(m, j, n), Fraction(0)))
        for m in range(n):
            if m != k:
                rows.append((_unit_diff(k, m, n), b[k] - b[m]))
            if m != l:
                rows.append((_unit_diff(m, l, n), b[m] - b[l]))
    else:
        for m, nn in permutations(range(n), 2):
            if (m, nn) != (i, j):
                rows.append((diff_row(i, j, m, nn), Fraction(0)))
        for m, nn in permutations(range(n), 2):
            if (m, nn) != (k, l):
                rows.append((diff_row(k, l, m, nn), b[k] - b[l] - b[m] + b[nn]))
    if strict:
        return LinearSystem.build(d, equality, (), rows)
    return LinearSystem.build(d, equality, rows, ())


def _unit_diff(p: int, r: int, n: int) -> list[int]:
    cs = [0] * n
    cs[p] += 1
    cs[r] -= 1
    return cs[: n - 1]


def _embed(witness: Sequence[Fraction]) -> tuple[Fraction, ...]:
    return tuple(witness) + (Fraction(0),)


def quadruple_feasible(b, q: IndexQuadruple, mode: str = WEAK, *, compact: bool = True):
    """(feasible, witness) for S(q); the witness is a full (d+1)-vector."""
    if mode not in (WEAK, STRICT):
        raise ValueError(f"unknown mode {mode!r}")
    res = solve_feasibility(build_system(b, q, compact=compact, strict=(mode == STRICT)))
    if not res.feasible:
        return False, None
    return True, _embed(res.witness)


@dataclass
class BisectorSummary:
    b: tuple[Fraction, ...]
    feasible_quadruples: list[IndexQuadruple]
    count: int
    bound: int
    generic_flag: bool
    witnesses: dict[IndexQuadruple, tuple[Fraction, ...]] = field(default_factory=dict)
    mode: str = WEAK

    def to_dict(self) -> dict:
        return {
            "b": [str(v) for v in self.b],
            "mode": self.mode,
            "count": self.count,
            "bound": self.bound,
            "generic": self.generic_flag,
            "pieces": [
                {
                    "quadruple": list(q),
                    "label": q.label(),
                    "witness": [str(v) for v in self.witnesses[q]],
                }
                for q in self.feasible_quadruples
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def enumerate_components(
    b,
    mode: str = WEAK,
    *,
    candidates: Optional[Iterable[IndexQuadruple]] = None,
    compact: bool = True,
) -> BisectorSummary:
    """Test every quadruple (or the given candidates) and collect feasible pieces."""
    b = exact_point(b)
    n = len(b)
    if n < 2:
        raise BadDimension("BadDimension: need d+1 >= 2")
    generic, problems = is_generic(b)
    if not generic:
        log.warning("non-generic b=%s: %s", [str(v) for v in b], "; ".join(problems))
    qs = all_quadruples(n) if candidates is None else sorted(IndexQuadruple(*q) for q in candidates)
    feasible, witnesses = [], {}
    for q in qs:
        ok, w = quadruple_feasible(b, q, mode, compact=compact)
        if ok:
            feasible.append(q)
            witnesses[q] = w
    return BisectorSummary(b, feasible, len(feasible), upper_bound(n - 1), generic, witnesses, mode)


def _order_ok(b, q: IndexQuadruple, hi, lo) -> bool:
    i, j, k, l = q
    if not (b[j] <= b[i] and b[k] <= b[l] and b[k] <= b[i] and b[j] <= b[l]):
        return False
    if j == k and not (b[j] == lo and b[j] <= 2 * b[l] - b[i]):
        return False
    if i == l and not (b[i] == hi and b[j] >= 2 * b[k] - b[i]):
        return False
    return True


def prune_candidates(b) -> list[IndexQuadruple]:
    """Quadruples that survive the necessary order conditions for non-emptiness.

    Applied filters: b_j <= b_i, b_k <= b_l, b_k <= b_i, b_j <= b_l; j == k
    forces b_j = min(b) and b_j <= 2 b_l - b_i; i == l forces b_i = max(b)
    and b_j >= 2 b_k - b_i.  The remaining mutual exclusion between the
    S(m, j, j, n) and S(i, m, n, i) families needs feasibility information and
    is checked by :func:`mutual_exclusion_violations` instead.
    """
    b = exact_point(b)
    if len(set(b)) != len(b):
        raise NonGenericInput("NonGenericInput: coordinates of b must be pairwise distinct")
    hi, lo = max(b), min(b)
    return [q for q in all_quadruples(len(b)) if _order_ok(b, q, hi, lo)]


def mutual_exclusion_violations(summary: BisectorSummary) -> list[tuple[int, int]]:
    """(m, n) pairs where both S(m, jmin, jmin, n) and S(imax, m, n, imax) are non-empty."""
    b = summary.b
    jmin = b.index(min(b))
    imax = b.index(max(b))
    found = set(summary.feasible_quadruples)
    bad = []
    for m, n in product(range(len(b)), repeat=2):
        first = IndexQuadruple(m, jmin, jmin, n)
        second = IndexQuadruple(imax, m, n, imax)
        if first in found and second in found:
            bad.append((m, n))
    return bad


def upper_bound(d: int) -> int:
    """4 C(d+1,4) + 2 C(d+1,3) + 2 C(d,2) + 1 for bis(0, b) with b in R^{d+1}/R1."""
    if d < 1:
        raise BadDimension(f"BadDimension: d must be >= 1, got {d}")
    return 4 * math.comb(d + 1, 4) + 2 * math.comb(d + 1, 3) + 2 * math.comb(d, 2) + 1


def is_generic(b) -> tuple[bool, list[str]]:
    """Distinct coordinates and no coordinate equal to the midpoint of two others."""
    b = exact_point(b)
    problems = []
    for p, r in combinations(range(len(b)), 2):
        if b[p] == b[r]:
            problems.append(f"b{p + 1} = b{r + 1}")
    for mid in range(len(b)):
        for p, r in combinations([v for v in range(len(b)) if v != mid], 2):
            if 2 * b[mid] - b[p] - b[r] == 0:
                problems.append(f"2*b{mid + 1} - b{p + 1} - b{r + 1} = 0")
    return not problems, problems


def on_bisector(x, b) -> bool:
    """Exact membership test: d(x, 0) == d(x, b)."""
    x = tuple(as_rational(v) for v in x)
    return trop_dist(x, (0,) * len(x)) == trop_dist(x, exact_point(b))


# -- sampling -----------------------------------------------------------------


def sample_b(dplus1: int, seed: int, trial: int) -> tuple[Fraction, ...]:
    """Trial ``trial``'s point: i.i.d. N(0, 1) coordinates, converted exactly."""
    rng = np.random.default_rng([seed, trial])
    raw = rng.standard_normal(dplus1)
    return exact_point([rational_from_float(v) for v in raw])


def count_components(b, mode: str = WEAK) -> int:
    """C(b) using only pruned candidates (identical to exhaustive enumeration)."""
    b = exact_point(b)
    if len(set(b)) != len(b):
        return enumerate_components(b, mode).count
    return enumerate_components(b, mode, candidates=prune_candidates(b)).count


@dataclass
class Histogram:
    dplus1: int
    trials: int
    seed: int
    mode: str
    counts: dict[int, int]

    @property
    def percentages(self) -> dict[int, float]:
        return {c: 100.0 * v / self.trials for c, v in sorted(self.counts.items())}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dimension", "component_count", "trials", "percentage", "seed"])
        for c, pct in self.percentages.items():
            w.writerow([self.dplus1, c, self.trials, f"{pct:.1f}", self.seed])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "dimension": self.dplus1,
                "trials": self.trials,
                "seed": self.seed,
                "mode": self.mode,
                "bound": upper_bound(self.dplus1 - 1),
                "counts": {str(c): v for c, v in sorted(self.counts.items())},
                "percentages": {str(c): p for c, p in self.percentages.items()},
            },
            indent=2,
        )

    def to_text(self) -> str:
        lines = [f"d+1 = {self.dplus1}, {self.trials} trials, seed {self.seed}"]
        lines += [f"  {c:>6} : {p:5.1f}%" for c, p in self.percentages.items()]
        lines.append(f"  bound  : {upper_bound(self.dplus1 - 1)}")
        return "\n".join(lines)


def sample_distribution(dplus1: int, trials: int, seed: int, mode: str = WEAK, workers: int = 1) -> Histogram:
    """Distribution of C(b) over ``trials`` Gaussian samples of b.

    Trial t draws from its own stream seeded by (seed, t), so the result does
    not depend on ``workers``.
    """
    if dplus1 < 3:
        raise BadDimension("BadDimension: dplus1 must be >= 3")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    args = [(dplus1, seed, t, mode) for t in range(trials)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_trial, args, chunksize=8))
    else:
        results = [_trial(a) for a in args]
    counts: dict[int, int] = {}
    for c in results:
        counts[c] = counts.get(c, 0) + 1
    return Histogram(dplus1, trials, seed, mode, dict(sorted(counts.items())))


def _trial(args) -> int:
    dplus1, seed, t, mode = args
    return count_components(sample_b(dplus1, seed, t), mode)
