"""Acceptance criteria, one test per criterion.

Each test prints a ``[PASS]`` or ``[FAIL]`` line with the measured numbers;
run ``pytest tests/test_acceptance.py -s`` to see them, or execute this file
directly for the summary alone.
"""

import math
import sys
import time
from fractions import Fraction

import pytest

from coded_tradeoff.analysis import (achievable_load, appendix_gap_check, lower_bound_load,
                                     tradeoff_curve)
from coded_tradeoff.codec import PlanError, SchemeParams, build_storage_plan, verify_decodability
from coded_tradeoff.shuffle import assign_reduce_tasks, measure_load, run_shuffle
from coded_tradeoff.sim import MONTE_CARLO, SimConfig, make_instance, run, run_single
from coded_tradeoff.stragglers import LatencyModel, empirical_order_statistic, expected_order_statistic

from helpers import divisible_grid, params

GRID = divisible_grid(max_K=12, max_m=120, max_N=60)


def report(n, ok, detail, elapsed=None):
    timing = "" if elapsed is None else f" ({elapsed:.2f}s)"
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}{timing}")
    return ok


def test_1_golden_examples():
    t0 = time.perf_counter()
    checks = []
    for q, L, D in [(4, 1, Fraction(37, 6)), (2, 2, Fraction(19, 6))]:
        p = SchemeParams(K=4, q=q, mu="1/2", m=12, n=4, N=4)
        rep = run_single(SimConfig(p, LatencyModel.shifted_exponential(2)))
        checks.append(rep.trials[0].load == L and rep.analytic_D == D and rep.all_correct)
    p = SchemeParams(K=6, q=4, mu="1/2", m=20, n=4, N=12)
    t = run_single(SimConfig(p, LatencyModel.shifted_exponential(6))).trials[0]
    checks.append((t.load, t.coded_symbols, t.uncoded_symbols, t.correct) == (Fraction(21, 5), 36, 48, True))
    elapsed = time.perf_counter() - t0
    ok = all(checks) and elapsed < 1
    assert report(1, ok, f"L=1 D=37/6, L=2 D=19/6, L=21/5 as 36+48 symbols: {checks}", elapsed)


def test_2_k18_gaps_and_envelope():
    t0 = time.perf_counter()
    curve = tradeoff_curve(18, Fraction(1, 3), 180)
    gaps = {p.q: p.gap for p in curve.points}
    e120, e240 = float(curve.envelope_ach(120)), float(curve.envelope_ach(240))
    elapsed = time.perf_counter() - t0
    ok = (gaps[3] == Fraction(4, 3) and gaps[18] == Fraction(8, 3) and curve.max_gap <= Fraction(21, 5)
          and abs(e120 - 43) <= 1 and abs(e240 - 23) <= 1 and abs(e120 / e240 - 1.87) <= 0.05
          and elapsed < 1)
    assert report(2, ok, f"gap(3)={gaps[3]} gap(18)={gaps[18]} max={float(curve.max_gap):.3f} "
                         f"env(120)={e120:.2f} env(240)={e240:.2f} ratio={e120 / e240:.3f}", elapsed)


def test_3_formula_matches_simulation():
    t0 = time.perf_counter()
    bad = []
    for K, q, mu, m, N in GRID:
        inst = make_instance(params(K, q, mu, m, N), seed=K + q)
        t = run_shuffle(inst.plan, assign_reduce_tasks(range(1, q + 1), N), inst.map_values)
        if measure_load(t) != achievable_load(K, q, mu, N):
            bad.append((K, q, mu))
    elapsed = time.perf_counter() - t0
    ok = len(GRID) >= 30 and not bad and elapsed < 60
    assert report(3, ok, f"{len(GRID)} configurations, {len(bad)} mismatches", elapsed)


ENDTOEND = [
    SchemeParams(K=6, q=4, mu="1/2", m=20, n=4, N=12),
    SchemeParams(K=4, q=2, mu="1/2", m=12, n=3, N=4),
    SchemeParams(K=5, q=4, mu="2/5", m=12, n=5, N=8),
    SchemeParams(K=8, q=6, mu="1/4", m=12, n=2, N=6),
    SchemeParams(K=7, q=7, mu="3/7", m=35, n=3, N=7),
    SchemeParams(K=9, q=5, mu="1/3", m=15, n=2, N=10, w=8),
]


def test_4_end_to_end_exact():
    t0 = time.perf_counter()
    trials = correct = 0
    for i, p in enumerate(ENDTOEND):
        n_trials = 20 if i < 4 else 10
        rep = run(SimConfig(p, LatencyModel.shifted_exponential(1), seed=100 + i, trials=n_trials,
                            mode=MONTE_CARLO))
        trials += len(rep.trials)
        correct += sum(t.correct is True for t in rep.trials)
    elapsed = time.perf_counter() - t0
    ok = trials >= 100 and correct == trials and elapsed < 60
    assert report(4, ok, f"{correct}/{trials} trials over {len(ENDTOEND)} configurations decoded exactly",
                  elapsed)


def test_5_order_statistics():
    t0 = time.perf_counter()
    errs = {}
    for K, q in [(4, 2), (14, 7), (18, 12)]:
        model = LatencyModel.shifted_exponential(10)
        exact = float(expected_order_statistic(model, K, q))
        est = empirical_order_statistic(model, K, q, 100_000, seed=K)
        errs[(K, q)] = abs(est - exact) / exact
    elapsed = time.perf_counter() - t0
    ok = all(e < 0.02 for e in errs.values()) and elapsed < 10
    detail = " ".join(f"{k}:{v:.4%}" for k, v in errs.items())
    assert report(5, ok, f"relative errors {detail}", elapsed)


def test_6_dominance_and_endpoints():
    bad = []
    for K, q, mu, _, N in GRID:
        if lower_bound_load(K, q, mu, N) > achievable_load(K, q, mu, N):
            bad.append(("dominance", K, q, mu))
    combos = {(K, mu, N) for K, _, mu, _, N in GRID}
    for K, mu, N in combos:
        q0 = math.ceil(1 / mu)
        r = math.floor(mu * K)
        if achievable_load(K, q0, mu, N) != N - Fraction(N, q0):
            bad.append(("min-latency endpoint", K, mu))
        if achievable_load(K, K, mu, N) != N * (1 - Fraction(r, K)) / r:
            bad.append(("max-latency endpoint", K, mu))
        if (1 / mu).denominator == 1:
            gap = tradeoff_curve(K, mu, N).points[0].gap
            if gap is not None and gap > 2:
                bad.append(("min-latency gap", K, mu, gap))
    assert report(6, not bad, f"{len(GRID)} grid points, {len(combos)} (K, mu, N) curves, violations {bad}")


def test_7_full_wait_ratio_bound():
    t0 = time.perf_counter()
    worst, count, fails = Fraction(0), 0, []
    for K in range(2, 65):
        for a in range(1, K + 1):
            ratio, ok = appendix_gap_check(K, Fraction(a, K))
            count += 1
            worst = max(worst, ratio)
            if not ok:
                fails.append((K, a))
    elapsed = time.perf_counter() - t0
    ok = not fails and elapsed < 10
    assert report(7, ok, f"{count} (K, muK) pairs, max ratio {float(worst):.4f} < 3+sqrt5="
                         f"{3 + 5 ** 0.5:.4f}, failures {fails}", elapsed)


def test_8_decodability():
    t0 = time.perf_counter()
    checked = 0
    failures = []
    seen = set()
    for K, q, mu, m, N in GRID:
        key = (K, q, math.floor(mu * q), m)  # the plan depends on mu only through r
        if math.comb(K, q) > 10_000 or key in seen:
            continue
        seen.add(key)
        rep = verify_decodability(build_storage_plan(params(K, q, mu, m, N)))
        checked += 1
        if not (rep.passed and rep.exhaustive):
            failures.append((K, q, mu))
    random_ok = build_storage_plan(SchemeParams(K=6, q=4, mu="1/2", m=20, n=4, N=12), random_mds_seed=1)
    try:
        build_storage_plan(SchemeParams(K=6, q=2, mu="1/2", m=2, n=2, N=2, w=3), random_mds_seed=0)
        aborted = False
    except PlanError:
        aborted = True
    elapsed = time.perf_counter() - t0
    ok = not failures and aborted and random_ok.generator_kind == "random"
    assert report(8, ok, f"{checked} distinct plans exhaustively decodable, failures {failures}; "
                         f"random generator rank failure aborts planning: {aborted}", elapsed)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
