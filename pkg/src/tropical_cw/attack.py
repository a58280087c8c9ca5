"""Untargeted Carlini-Wagner L2 attack on tropical- and linear-top networks.

The search runs in tanh space, x' = (tanh(z) + 1) / 2, so every iterate stays
in the unit box.  The objective is

    ||x' - x||^2 + lam * max(Z_c(x') - max_{i != c} Z_i(x'), -kappa)

with scores Z as in :mod:`tropical_cw.neural`.  The ``altered`` method swaps
each tropical distance inside the margin for its thresholded sum, which has a
dense gradient; success is always judged by the unmodified network.

All rows of a batch (inputs times starting points) are optimised in lockstep
but independently, so batching never changes a result.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .neural import Dataset, TropicalNet, backprop, predict, trace

METHODS = ("vanilla", "altered")
EPS = 1e-6


@dataclass
class AttackConfig:
    method: str = "vanilla"
    kappa: float = 0.0
    lr: float = 0.1
    lambda_init: float = 1e-3
    lambda_range: tuple[float, float] = (0.0, 1e10)
    adjust_every: int = 10
    max_steps: int = 1000
    msp_count: int = 1
    msp_radius: float = 0.1
    tau_decay: float = 0.9
    tau_init_rank: int = 7
    optimizer: str = "gd"  # or "adam"
    stall_tol: float = 0.01
    center: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        lo, hi = self.lambda_range
        if not 0 <= lo <= self.lambda_init <= hi:
            raise ValueError("lambda_range must be ordered and contain lambda_init")
        if self.msp_count < 1 or self.adjust_every < 1 or self.max_steps < 1:
            raise ValueError("msp_count, adjust_every and max_steps must be >= 1")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        self.lambda_range = (float(lo), float(hi))


@dataclass
class AttackResult:
    success: bool
    adversarial: np.ndarray
    l2: float
    steps_used: int
    final_lambda: float
    start_index: int
    margin: float = math.nan
    lambda_trace: list[tuple[float, float, float]] = field(default_factory=list, repr=False)


# -- objective --------------------------------------------------------------------------


def to_box(z: np.ndarray) -> np.ndarray:
    return (np.tanh(z) + 1.0) / 2.0


def from_box(x: np.ndarray) -> np.ndarray:
    return np.arctanh(2.0 * np.clip(x, EPS, 1.0 - EPS) - 1.0)


def _runner_up(Z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    masked = Z.copy()
    masked[np.arange(len(labels)), labels] = -np.inf
    return masked.argmax(axis=1)


def margins(net: TropicalNet, X, labels, kappa: float = 0.0, tau=None, center: bool = True) -> np.ndarray:
    """Hinge margin per row; <= 0 once the row is misclassified (kappa = 0)."""
    tr = trace(net, X, tau, center, rowwise=True)
    y = np.asarray(labels, dtype=int)
    Z = tr.scores
    rows = np.arange(len(y))
    return np.maximum(Z[rows, y] - Z[rows, _runner_up(Z, y)], -kappa)


def cw_margin(net: TropicalNet, x_prime, true_class: int, kappa: float = 0.0, tau: Optional[float] = None, center: bool = True) -> float:
    return float(margins(net, np.atleast_2d(x_prime), [true_class], kappa, tau, center)[0])


def _objective_batch(net, Zvar, X, labels, lam, kappa, tau, center=True):
    """Objective, its gradient in z, the raw margin and the trace, per row."""
    Xp = to_box(Zvar)
    tr = trace(net, Xp, tau, center, rowwise=True)
    Z = tr.scores
    rows = np.arange(len(labels))
    runner = _runner_up(Z, labels)
    raw = Z[rows, labels] - Z[rows, runner]
    f = np.maximum(raw, -kappa)
    diff = Xp - X
    obj = (diff**2).sum(axis=1) + lam * f
    g_scores = np.zeros_like(Z)
    active = raw > -kappa
    g_scores[rows, labels] += lam * active
    g_scores[rows, runner] -= lam * active
    _, g_x = backprop(net, tr, g_scores, want_params=False)
    g_x = g_x + 2.0 * diff
    g_z = g_x * (1.0 - np.tanh(Zvar) ** 2) / 2.0
    return obj, g_z, raw, tr


def objective(net, z_var, x, true_class, lam, method="vanilla", tau=None, kappa=0.0, center=True) -> float:
    """Scalar CW objective at a single tanh-space point."""
    t = tau if method == "altered" else None
    obj, _, _, _ = _objective_batch(net, np.atleast_2d(z_var), np.atleast_2d(x), np.array([true_class]), lam, kappa, t, center)
    return float(obj[0])


def objective_grad(net, z_var, x, true_class, lam, method="vanilla", tau=None, kappa=0.0, center=True) -> np.ndarray:
    t = tau if method == "altered" else None
    _, g, _, _ = _objective_batch(net, np.atleast_2d(z_var), np.atleast_2d(x), np.array([true_class]), lam, kappa, t, center)
    return g[0]


TAU_FLOOR = 1e-6


def _offsets(net: TropicalNet, X, center: bool) -> np.ndarray:
    s = trace(net, X, rowwise=True).shifted
    return s - s.mean(axis=2, keepdims=True) if center else s


def initial_tau(net: TropicalNet, X, labels, rank: int = 7, center: bool = True) -> np.ndarray:
    """``rank``-th largest entry of |h + w_c| per row (clamped to the width).

    A threshold must be positive, so a zero entry is lifted to a tiny floor.
    """
    if net.top != "tropical":
        return np.ones(len(labels))
    rows = np.arange(len(labels))
    mags = np.sort(np.abs(_offsets(net, X, center)[rows, labels]), axis=1)[:, ::-1]
    k = min(rank, mags.shape[1]) - 1
    return np.maximum(mags[:, k], TAU_FLOOR)


# -- search -----------------------------------------------------------------------------


def msp_starts(x: np.ndarray, count: int, radius: float, seed: int, input_id: int) -> np.ndarray:
    """Starting points: x itself, then x plus uniform draws from the sphere of ``radius``."""
    starts = [x]
    for s in range(1, count):
        u = np.random.default_rng([seed, input_id, s]).standard_normal(x.shape)
        starts.append(x + radius * u / np.linalg.norm(u))
    return np.array(starts)


def _descend(net: TropicalNet, X: np.ndarray, labels: np.ndarray, starts: np.ndarray, cfg: AttackConfig, record=False):
    """Run the attack on every row; returns a list of AttackResult (start_index unset)."""
    n, D = X.shape
    altered = cfg.method == "altered" and net.top == "tropical"
    lo_range, hi_range = cfg.lambda_range
    z = from_box(starts)
    lam = np.full(n, cfg.lambda_init)
    lo = np.full(n, lo_range)
    hi = np.full(n, hi_range)
    tau = initial_tau(net, starts, labels, cfg.tau_init_rank, cfg.center) if altered else None
    best_l2 = np.full(n, np.inf)
    best_adv = starts.copy()
    best_step = np.full(n, cfg.max_steps)
    won_in_window = np.zeros(n, dtype=bool)
    last_obj = np.full(n, np.inf)
    trace_log = [[] for _ in range(n)] if record else None
    m = v = None
    if cfg.optimizer == "adam":
        m, v = np.zeros_like(z), np.zeros_like(z)

    for step in range(cfg.max_steps):
        obj, g, _, tr = _objective_batch(net, z, X, labels, lam, cfg.kappa, tau, cfg.center)
        Xp = to_box(z)
        wrong = predict(net, Xp, rowwise=True) != labels
        l2 = np.linalg.norm(Xp - X, axis=1)
        better = wrong & (l2 < best_l2)
        best_l2[better] = l2[better]
        best_adv[better] = Xp[better]
        best_step[better] = step
        won_in_window |= wrong

        if cfg.optimizer == "adam":
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            z = z - cfg.lr * (m / (1 - 0.9 ** (step + 1))) / (np.sqrt(v / (1 - 0.999 ** (step + 1))) + 1e-8)
        else:
            z = z - cfg.lr * g

        if altered:
            quiet = np.all(np.abs(tr.shifted) < tau[:, None, None], axis=(1, 2))
            tau[quiet] *= cfg.tau_decay

        if (step + 1) % cfg.adjust_every == 0:
            # "no decrease" means less than a stall_tol relative improvement
            stalled = ~won_in_window & np.isfinite(last_obj)
            stalled[stalled] &= obj[stalled] >= last_obj[stalled] * (1 - cfg.stall_tol * np.sign(last_obj[stalled]))
            hi = np.where(won_in_window, np.minimum(hi, lam), hi)
            lo = np.where(stalled, np.maximum(lo, lam), lo)
            grow = np.where(hi >= hi_range, np.minimum(lam * 10.0, hi), (lo + hi) / 2.0)
            lam = np.where(won_in_window, (lo + hi) / 2.0, np.where(stalled, grow, lam))
            if record:
                for r in range(n):
                    trace_log[r].append((float(lo[r]), float(lam[r]), float(hi[r])))
            won_in_window[:] = False
            last_obj = obj

    final = to_box(z)
    final_margin = margins(net, final, labels, 0.0)
    results = []
    for r in range(n):
        if np.isfinite(best_l2[r]):
            adv, ok, dist = best_adv[r], True, float(best_l2[r])
            mr = float(margins(net, adv[None], labels[r : r + 1])[0])
        else:
            adv, ok, dist = final[r], False, float(np.linalg.norm(final[r] - X[r]))
            mr = float(final_margin[r])
        results.append(
            AttackResult(ok, adv, dist, int(best_step[r]) if ok else cfg.max_steps, float(lam[r]), 0, mr, trace_log[r] if record else [])
        )
    return results


def _pick(results: list[AttackResult]) -> AttackResult:
    wins = [r for r in results if r.success]
    if wins:
        return min(wins, key=lambda r: (r.l2, r.start_index))
    return min(results, key=lambda r: (r.margin, r.start_index))


def run_attack(net: TropicalNet, x, true_class: int, cfg: AttackConfig = AttackConfig(), input_id: int = 0, record=False) -> AttackResult:
    """Attack one input from ``cfg.msp_count`` starts and keep the best outcome."""
    x = np.asarray(x, dtype=float)
    starts = msp_starts(x, cfg.msp_count, cfg.msp_radius, cfg.seed, input_id)
    X = np.repeat(x[None], len(starts), axis=0)
    labels = np.full(len(starts), true_class)
    per_start = _descend(net, X, labels, starts, cfg, record)
    for i, r in enumerate(per_start):
        r.start_index = i
    return _pick(per_start)


@dataclass
class AttackReport:
    method: str
    model_tag: str
    msp: int
    input_ids: list[int]
    results: list[AttackResult]
    config: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return len(self.results)

    @property
    def successes(self) -> int:
        return sum(r.success for r in self.results)

    @property
    def success_rate(self) -> float:
        return self.successes / self.total if self.total else 0.0

    @property
    def mean_l2_over_successes(self) -> float:
        wins = [r.l2 for r in self.results if r.success]
        return float(np.mean(wins)) if wins else 0.0

    @property
    def mean_l2_all(self) -> float:
        return float(np.mean([r.l2 for r in self.results])) if self.results else 0.0

    @property
    def empty(self) -> bool:
        return self.total == 0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "model": self.model_tag,
            "msp": self.msp,
            "total": self.total,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "mean_l2_over_successes": self.mean_l2_over_successes,
            "mean_l2_all_attempts": self.mean_l2_all,
            "empty": self.empty,
            "denominator": "inputs classified correctly before the attack",
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["input_id", "method", "msp", "success", "l2", "steps", "final_lambda"])
        for i, r in zip(self.input_ids, self.results):
            w.writerow([i, self.method, self.msp, int(r.success), repr(r.l2), r.steps_used, repr(r.final_lambda)])
        return buf.getvalue()


def evaluate_suite(
    net: TropicalNet,
    data: Dataset,
    cfg: AttackConfig = AttackConfig(),
    limit: Optional[int] = None,
    model_tag: str = "",
    chunk: int = 512,
    workers: int = 1,
) -> AttackReport:
    """Attack every correctly classified input (the first ``limit`` of them).

    Rows are independent, so chunking and ``workers > 1`` leave results unchanged.
    """
    correct = np.flatnonzero(predict(net, data.inputs) == data.labels) if len(data) else np.array([], dtype=int)
    if limit is not None:
        correct = correct[:limit]
    rows_x, rows_y, rows_s, owner = [], [], [], []
    for idx in correct:
        x = data.inputs[idx]
        starts = msp_starts(x, cfg.msp_count, cfg.msp_radius, cfg.seed, int(idx))
        rows_x.append(np.repeat(x[None], len(starts), axis=0))
        rows_s.append(starts)
        rows_y.append(np.full(len(starts), data.labels[idx]))
        owner += [(int(idx), s) for s in range(len(starts))]
    per_row: list[AttackResult] = []
    if owner:
        X, Y, S = np.concatenate(rows_x), np.concatenate(rows_y), np.concatenate(rows_s)
        jobs = [(X[i : i + chunk], Y[i : i + chunk], S[i : i + chunk]) for i in range(0, len(X), chunk)]
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_descend, net, x, y, st, cfg) for x, y, st in jobs]
                for fut in futures:
                    per_row += fut.result()
        else:
            for x, y, st in jobs:
                per_row += _descend(net, x, y, st, cfg)
    grouped: dict[int, list[AttackResult]] = {}
    for (idx, s), r in zip(owner, per_row):
        r.start_index = s
        grouped.setdefault(idx, []).append(r)
    ids = [int(i) for i in correct]
    results = [_pick(grouped[i]) for i in ids]
    cfg_dict = asdict(cfg)
    cfg_dict["lambda_range"] = list(cfg.lambda_range)
    return AttackReport(cfg.method, model_tag, cfg.msp_count, ids, results, cfg_dict)


# -- oscillation ------------------------------------------------------------------------


@dataclass
class Trajectory:
    points: np.ndarray  # (iters + 1, 2)
    values: np.ndarray  # max(h) at each point

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "x1", "x2", "maxh"])
        for i, ((a, b), v) in enumerate(zip(self.points, self.values)):
            w.writerow([i, repr(float(a)), repr(float(b)), repr(float(v))])
        return buf.getvalue()


def max_h(x) -> float:
    """max(x1^2 + 2 x2, x1^2 - 2.2 x2): minimised only at the origin."""
    return max(x[0] ** 2 + 2.0 * x[1], x[0] ** 2 - 2.2 * x[1])


def max_h_grad(x) -> np.ndarray:
    return np.array([2.0 * x[0], 2.0 if x[1] > 0 else -2.2])


def oscillation_demo(step: float = 0.1, start=(1.0, 0.05), iters: int = 100) -> Trajectory:
    """Plain gradient descent on max_h; the x2 step never shrinks, so it zigzags."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    x = np.array(start, dtype=float)
    pts, vals = [x.copy()], [max_h(x)]
    for _ in range(iters):
        x = x - step * max_h_grad(x)
        pts.append(x.copy())
        vals.append(max_h(x))
    return Trajectory(np.array(pts), np.array(vals))
