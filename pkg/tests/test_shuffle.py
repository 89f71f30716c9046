import itertools
import json
import math
from fractions import Fraction

import numpy as np
import pytest

from coded_tradeoff.analysis import achievable_load
from coded_tradeoff.codec import SchemeParams, build_storage_plan
from coded_tradeoff.shuffle import (ShuffleError, ShuffleTranscript, assign_reduce_tasks, build_needed_sets,
                                    expected_round_recovery, finish_residual, measure_load,
                                    per_output_recovered, rows_by_subset, run_coded_rounds, run_shuffle)
from coded_tradeoff.sim import make_instance

from helpers import divisible_grid, params

WORKED = SchemeParams(K=6, q=4, mu=Fraction(1, 2), m=20, n=4, N=12)


@pytest.fixture(scope="module")
def worked():
    inst = make_instance(WORKED, seed=5)
    return inst, assign_reduce_tasks((1, 2, 3, 4), 12)


def true_value(inst, i, j):
    C = inst.plan.gf.matmul(inst.plan.generator_rows([i]), inst.A)
    return int(inst.plan.gf.matmul(C, inst.X[:, [j - 1]])[0, 0])


def test_assignment_blocks():
    a = assign_reduce_tasks((4, 1, 3, 2), 12)
    assert a.W == {1: (1, 2, 3), 2: (4, 5, 6), 3: (7, 8, 9), 4: (10, 11, 12)}
    assert a.owner(8) == 3
    with pytest.raises(ValueError):
        assign_reduce_tasks((1, 2, 3), 4)


def test_needed_set_examples(worked):
    inst, a = worked
    sets = {(v.S, v.k): v.items for v in build_needed_sets(inst.plan, a)}
    assert sets[((2, 3), 1)] == tuple((i, j) for i in (11, 12) for j in (1, 2, 3))
    assert sets[((1, 2), 3)] == tuple((i, j) for i in (1, 2) for j in (7, 8, 9))


@pytest.mark.parametrize("K,q,mu,m,N", [(6, 4, Fraction(1, 2), 20, 12), (7, 5, Fraction(3, 7), 15, 10),
                                        (8, 6, Fraction(1, 2), 42, 6)])
def test_needed_set_sizes(K, q, mu, m, N):
    plan = build_storage_plan(params(K, q, mu, m, N))
    p = plan.params
    a = assign_reduce_tasks(range(1, q + 1), N)
    for v in build_needed_sets(plan, a):
        j = len(v.S)
        assert len(v.items) == math.comb(K - q, p.r - j) * p.batch_size * N // q


def test_servers_never_send_foreign_rows(worked):
    inst, a = worked
    t = run_shuffle(inst.plan, a, inst.map_values)
    for msg in t.messages:
        assert msg.sender in a.Q and msg.sender not in msg.recipients


def test_recovered_values_are_true_products(worked):
    inst, a = worked
    t = run_shuffle(inst.plan, a, inst.map_values)
    for k, rec in t.recovered.items():
        for (i, j), v in itertools.islice(rec.items(), 25):
            assert j in a.W[k]
            assert i not in inst.plan.server_rows[k]
            assert v == true_value(inst, i, j)


def test_worked_example_rounds(worked):
    inst, a = worked
    t = run_coded_rounds(inst.plan, a, inst.map_values)
    assert t.s == 2
    # each 3-subset multicasts 3 symbols from each of its 3 members
    assert t.symbols("coded") == 36
    by_S = {}
    for msg in t.messages:
        key = tuple(sorted((msg.sender, *msg.recipients)))
        by_S[key] = by_S.get(key, 0) + msg.symbols
    assert by_S == {S: 9 for S in itertools.combinations((1, 2, 3, 4), 3)}
    rec = per_output_recovered(t, a, 2)
    assert all(v == expected_round_recovery(inst.plan, 4, 2) for v in rec.values())
    finish_residual(inst.plan, a, t, inst.map_values)
    assert (t.strategy, t.symbols("uncoded"), measure_load(t)) == ("uncoded", 48, Fraction(21, 5))


@pytest.mark.parametrize("q,load", [(4, Fraction(1)), (2, Fraction(2))])
def test_small_examples(q, load):
    p = params(4, q, Fraction(1, 2), 12, 4)
    inst = make_instance(p, seed=0)
    t = run_shuffle(inst.plan, assign_reduce_tasks(range(1, q + 1), 4), inst.map_values)
    assert measure_load(t) == load == achievable_load(4, q, Fraction(1, 2), 4)


def test_empty_transcript_has_zero_load():
    assert measure_load(ShuffleTranscript(m=5, Q=(1,), s=0)) == 0


def test_load_independent_of_finishing_set():
    p = params(6, 4, Fraction(1, 2), 20, 12)
    inst = make_instance(p, seed=1)
    loads = {measure_load(run_shuffle(inst.plan, assign_reduce_tasks(Q, 12), inst.map_values))
             for Q in itertools.combinations(range(1, 7), 4)}
    assert loads == {Fraction(21, 5)}


def test_malformed_map_output_rejected(worked):
    inst, a = worked
    short = {**inst.map_values, 3: inst.map_values[3][:-1]}
    with pytest.raises((ShuffleError, ValueError)):
        run_shuffle(inst.plan, a, short)


def test_transcript_jsonl(tmp_path, worked):
    inst, a = worked
    t = run_shuffle(inst.plan, a, inst.map_values)
    path = tmp_path / "t.jsonl"
    t.write_jsonl(path)
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert len(lines) == len(t.messages)
    assert sum(x["symbols"] for x in lines) == 84
    assert {x["kind"] for x in lines} == {"coded", "uncoded"}
    assert all(len(x["payload_sha256"]) == 64 for x in lines)


def test_grid_sample_matches_formula():
    for K, q, mu, m, N in divisible_grid(max_K=7, max_m=60)[::3]:
        inst = make_instance(params(K, q, mu, m, N), seed=K * q)
        t = run_shuffle(inst.plan, assign_reduce_tasks(range(K - q + 1, K + 1), N), inst.map_values)
        assert measure_load(t) == achievable_load(K, q, mu, N), (K, q, mu)


def test_rows_by_subset_partition(worked):
    inst, a = worked
    groups = rows_by_subset(inst.plan, a.Q)
    rows = sorted(i for v in groups.values() for i in v)
    # rows held only by servers 5 and 6 are absent from Q
    assert len(rows) == 30 - inst.plan.params.batch_size
