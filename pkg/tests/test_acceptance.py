"""Acceptance criteria 1-13 at their stated tolerances.

Each test records one PASS/FAIL line (with the measured value and runtime);
the lines are printed together in the terminal summary, and also when this
file is run directly with ``python tests/test_acceptance.py``.
"""

import random
import time
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest

from oracles import attack_kink_gap, central_diff, central_jacobian, network_tie_gap, rel_err
from tropical_cw.attack import AttackConfig, evaluate_suite, from_box, initial_tau, objective, objective_grad, oscillation_demo
from tropical_cw.bisector import (
    build_system,
    enumerate_components,
    is_generic,
    mutual_exclusion_violations,
    on_bisector,
    prune_candidates,
    sample_b,
    sample_distribution,
    upper_bound,
)
from tropical_cw.neural import TrainConfig, backward, init_net, loss_and_grads, make_blobs, train
from tropical_cw.planar import bisector_pieces_2d
from tropical_cw.tropical import (
    locate_sectors,
    smoothed_trop_dist,
    smoothed_trop_dist_grad,
    softmin_jacobian,
    softmin_probs,
    trop_dist,
    trop_dist_grad,
)

RESULTS: dict[int, str] = {}
SEED = 0


def report(n: int, ok: bool, detail: str, start: float) -> None:
    RESULTS[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}  ({time.perf_counter() - start:.1f} s)"
    assert ok, RESULTS[n]


# -- shared runs (criterion 13 recomputes them from scratch) ----------------------------


def _histogram_csv(dplus1: int) -> str:
    return sample_distribution(dplus1, 1000, SEED).to_csv()


@lru_cache(maxsize=None)
def histogram(dplus1: int):
    return sample_distribution(dplus1, 1000, SEED)


def _attack_reports():
    blob_args = dict(dim=20, classes=10, spread=0.15)
    tr = make_blobs(3000, seed=1, **blob_args)
    va = make_blobs(300, seed=2, split="val", **blob_args)
    te = make_blobs(400, seed=3, split="test", **blob_args)
    nets = {top: train(init_net(20, 10, hidden=(64, 10), top=top, seed=SEED), tr, va, TrainConfig())[0] for top in ("tropical", "linear")}
    runs = {("linear", "vanilla", 1)} | {("tropical", m, k) for m in ("vanilla", "altered") for k in (1, 10)}
    return {
        key: evaluate_suite(nets[key[0]], te, AttackConfig(method=key[1], msp_count=key[2], seed=SEED), limit=100, model_tag=key[0])
        for key in sorted(runs)
    }


@lru_cache(maxsize=None)
def attack_reports():
    return _attack_reports()


# -- criteria ---------------------------------------------------------------------------

EXPECTED_BOUNDS = {3: 5, 4: 19, 5: 53, 6: 121, 7: 241, 8: 435, 9: 729, 10: 1153, 11: 1741}


def test_criterion_01_bound_values():
    t0 = time.perf_counter()
    got = {n: upper_bound(n - 1) for n in EXPECTED_BOUNDS}
    ok = got == EXPECTED_BOUNDS and time.perf_counter() - t0 < 1
    report(1, ok, f"bounds for d+1=3..11: {list(got.values())}", t0)


def test_criterion_02_closed_form():
    t0 = time.perf_counter()
    bad = [d for d in range(1, 51) if 6 * upper_bound(d) != d**4 + 5 * d**2 - 6 * d + 6]
    report(2, not bad and time.perf_counter() - t0 < 1, f"closed form d=1..50, mismatches {bad}", t0)


def test_criterion_03_distribution_three():
    t0 = time.perf_counter()
    h = histogram(3)
    report(3, h.counts == {5: 1000}, f"d+1=3 counts {h.counts}", t0)


def test_criterion_04_distribution_four():
    t0 = time.perf_counter()
    h = histogram(4)
    pct = h.percentages.get(17, 0.0)
    ok = set(h.counts) == {17, 19} and abs(pct - 47.9) <= 5
    report(4, ok, f"d+1=4 counts {h.counts}, 17 at {pct:.1f}% (target 47.9 +- 5)", t0)


def test_criterion_05_distribution_five_six():
    t0 = time.perf_counter()
    h5, h6 = histogram(5), histogram(6)
    pct = h5.percentages.get(49, 0.0)
    ok = set(h5.counts) == {49, 53} and abs(pct - 68) <= 5 and set(h6.counts) == {113, 115, 121}
    report(5, ok, f"d+1=5 counts {h5.counts}, 49 at {pct:.1f}% (target 68 +- 5); d+1=6 counts {h6.counts}", t0)


@pytest.mark.parametrize("dplus1", [7])
def test_distribution_large_dims(dplus1, request):
    if not request.config.getoption("--large-dims"):
        pytest.skip("optional; enable with --large-dims")
    h = sample_distribution(dplus1, 200, SEED)
    assert all(c % 2 == 1 and c <= upper_bound(dplus1 - 1) for c in h.counts)


def _structure_violations(b) -> list[str]:
    full = enumerate_components(b)
    found = set(full.feasible_quadruples)
    bad = []
    if full.count % 2 == 0:
        bad.append("even count")
    if full.count > full.bound:
        bad.append("count above bound")
    bad += [f"{q.label()} unpaired" for q in found if q.paired() not in found]
    self_paired = [q for q in found if q.i == q.l and q.j == q.k]
    if len(self_paired) != 1:
        bad.append(f"{len(self_paired)} self-paired pieces")
    elif not build_system(b, self_paired[0]).satisfied_by(tuple(v / 2 for v in b)[:-1]):
        bad.append("b/2 is not a witness of the self-paired piece")
    if not all(on_bisector(full.witnesses[q], b) for q in found):
        bad.append("witness off the bisector")
    if enumerate_components(b, candidates=prune_candidates(b)).feasible_quadruples != full.feasible_quadruples:
        bad.append("pruned enumeration differs")
    if mutual_exclusion_violations(full):
        bad.append("mutual exclusion")
    return bad


def test_criterion_06_structure():
    t0 = time.perf_counter()
    violations = []
    for dplus1 in (3, 4, 5):
        for t in range(200):
            b = sample_b(dplus1, 606, t)
            violations += [f"d+1={dplus1} trial {t}: {v}" for v in _structure_violations(b)]
    report(6, not violations, f"600 samples, {len(violations)} violations {violations[:3]}", t0)


def test_criterion_07_planar_line_example():
    t0 = time.perf_counter()
    pieces = bisector_pieces_2d((0, 0, 0), (1, 2, 0))
    generic, problems = is_generic((1, 2, 0))
    line = pieces[0] if len(pieces) == 1 else None
    ok = (
        line is not None
        and line.kind == "line"
        and line.direction[1] == 0
        and line.point[1] == 1
        and not generic
        and "2*b1 - b2 - b3 = 0" in problems
    )
    report(7, ok, f"{len(pieces)} piece(s) {[p.kind for p in pieces]}, degeneracy {problems}", t0)


def test_criterion_08_exact_geometry():
    t0 = time.perf_counter()
    rng = random.Random(808)
    checked = misses = 0
    for _ in range(100):
        a, b = (tuple(Fraction(rng.randint(-40, 40), rng.choice([1, 2, 3, 5])) for _ in range(3)) for _ in range(2))
        for piece in bisector_pieces_2d(a, b):
            for t in piece.sample_params(10):
                x = (*piece.at(t), Fraction(0))
                checked += 1
                misses += trop_dist(x, a) != trop_dist(x, b)
    report(8, misses == 0 and checked > 0, f"{checked} exact points, {misses} off the bisector", t0)


def _fd_suite() -> dict[str, float]:
    """Worst relative error of each analytic gradient over 100 tie-free points."""
    rng = np.random.default_rng(909)
    worst = {}

    def sweep(name, draw):
        errs = []
        while len(errs) < 100:
            e = draw()
            if e is not None:
                errs.append(e)
        worst[name] = max(errs)

    def trop():
        u, x = rng.normal(size=6), rng.normal(size=6)
        if locate_sectors(u, x).tie or np.min(np.diff(np.sort(u - x))) < 1e-4:
            return None
        return rel_err(trop_dist_grad(u, x), central_diff(lambda v: trop_dist(v, x), u))

    def smooth():
        x, w, tau = rng.normal(size=6) * 2, rng.normal(size=6), rng.uniform(0.1, 1.5)
        if np.min(np.abs(np.abs(x - w) - tau)) < 1e-4:
            return None
        return rel_err(smoothed_trop_dist_grad(x, w, tau), central_diff(lambda v: smoothed_trop_dist(v, w, tau), x))

    def softmin():
        z = rng.normal(size=5)
        return rel_err(softmin_jacobian(z), central_jacobian(softmin_probs, z))

    def network():
        net = init_net(5, 3, hidden=(6, 4), activation=str(rng.choice(["relu", "tanh"])), seed=int(rng.integers(1 << 30)))
        net.top_weight = net.top_weight + rng.normal(size=net.top_weight.shape)
        x, label = rng.uniform(size=5), int(rng.integers(3))
        if network_tie_gap(net, x) < 1e-4:
            return None
        analytic = np.concatenate([g.ravel() for g in backward(net, x, label)])
        numeric = []
        for p in net.parameters():
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + 1e-6
                up = loss_and_grads(net, x, [label])[0]
                p[idx] = old - 1e-6
                down = loss_and_grads(net, x, [label])[0]
                p[idx] = old
                numeric.append((up - down) / 2e-6)
        return rel_err(analytic, np.array(numeric))

    blob_args = dict(dim=8, classes=4, spread=0.1)
    victim, _ = train(init_net(8, 4, hidden=(16, 8), seed=9), make_blobs(400, seed=1, **blob_args), make_blobs(100, seed=2, **blob_args), TrainConfig(max_epochs=6))
    probe = make_blobs(100, seed=3, **blob_args)

    def attack(method):
        def draw():
            i = int(rng.integers(len(probe)))
            x, c = probe.inputs[i], probe.labels[i]
            z = from_box(x) + rng.normal(scale=0.3, size=x.shape)
            tau = float(initial_tau(victim, x[None], [c])[0]) if method == "altered" else None
            if attack_kink_gap(victim, z, tau) < 1e-4:
                return None
            lam = float(rng.choice([0.0, 0.5, 5.0]))
            g = objective_grad(victim, z, x, c, lam, method, tau)
            return rel_err(g, central_diff(lambda v: objective(victim, v, x, c, lam, method, tau), z))

        return draw

    sweep("trop_dist_grad", trop)
    sweep("smoothed_trop_dist_grad", smooth)
    sweep("softmin_jacobian", softmin)
    sweep("network backward", network)
    sweep("attack objective (vanilla)", attack("vanilla"))
    sweep("attack objective (altered)", attack("altered"))
    return worst


def test_criterion_09_gradient_suite():
    t0 = time.perf_counter()
    worst = _fd_suite()
    elapsed = time.perf_counter() - t0
    ok = all(e < 1e-4 for e in worst.values()) and elapsed < 60
    report(9, ok, "worst relative errors " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()), t0)


def test_criterion_10_smoothed_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1010)
    worst, checked = 0.0, 0
    while checked < 1000:
        x, w = rng.normal(size=6) * 3, rng.normal(size=6)
        s = np.sort(x - w)
        lo, hi = max(s[-2], -s[1], 0.0), min(s[-1], -s[0])
        if not lo < hi:
            continue
        tau = (lo + hi) / 2
        worst = max(worst, abs(smoothed_trop_dist(x, w, tau) - (trop_dist(x, w) - 2 * tau)))
        checked += 1
    report(10, worst < 1e-12, f"1000 pairs, max error {worst:.1e}", t0)


def test_criterion_11_oscillation():
    t0 = time.perf_counter()
    traj = oscillation_demo()
    late = np.sign(traj.points[-20:, 1])
    alternates = bool(np.all(late[1:] == -late[:-1]) and np.all(late != 0))
    deterministic = oscillation_demo().to_csv() == traj.to_csv()
    ok = traj.values[-1] > 1e-2 and alternates and deterministic
    report(11, ok, f"max h after 100 steps {traj.values[-1]:.4f} (minimum 0), late sign alternation {alternates}", t0)


def test_criterion_12_attack_direction():
    t0 = time.perf_counter()
    reps = attack_reports()
    rate = {key: r.success_rate for key, r in reps.items()}
    van1, alt1 = rate[("tropical", "vanilla", 1)], rate[("tropical", "altered", 1)]
    van10, alt10 = rate[("tropical", "vanilla", 10)], rate[("tropical", "altered", 10)]
    lin = rate[("linear", "vanilla", 1)]
    in_box = all(np.all((r.adversarial >= 0) & (r.adversarial <= 1)) for rep in reps.values() for r in rep.results)
    enough = all(rep.total >= 100 for rep in reps.values())
    checks = {"a": alt1 > van1, "b": van10 >= van1 and alt10 >= alt1, "c": lin >= 0.9, "d": in_box}
    detail = (
        f"tropical vanilla {van1:.2f} / altered {alt1:.2f}; with 10 starts {van10:.2f} / {alt10:.2f}; "
        f"linear vanilla {lin:.2f}; in box {in_box}; parts {checks}"
    )
    report(12, enough and all(checks.values()), detail, t0)


def test_criterion_13_determinism():
    t0 = time.perf_counter()
    differing = [f"d+1={n}" for n in (3, 4, 5) if _histogram_csv(n) != histogram(n).to_csv()]
    again = _attack_reports()
    differing += [f"attack {k}" for k, rep in attack_reports().items() if again[k].to_csv() != rep.to_csv()]
    report(13, not differing, f"reruns of criteria 3-5 and 12, differing CSVs {differing}", t0)


if __name__ == "__main__":
    import sys

    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                pass
            n = int(name.split("_")[2])
            print(RESULTS.get(n, f"criterion {n:>2}: FAIL  (error before a result was recorded)"), flush=True)
    sys.exit(0 if all("PASS" in line for line in RESULTS.values()) and len(RESULTS) == 13 else 1)
