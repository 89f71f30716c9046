import json
from fractions import Fraction

import numpy as np
import pytest

from coded_tradeoff.codec import SchemeParams
from coded_tradeoff.sim import MONTE_CARLO, SimConfig, make_instance, run, run_monte_carlo, run_single
from coded_tradeoff.stragglers import LatencyModel

WORKED = SchemeParams(K=6, q=4, mu=Fraction(1, 2), m=20, n=4, N=12)
MODEL = LatencyModel.shifted_exponential(6)


def test_single_run_decodes_and_matches_formula():
    rep = run_single(SimConfig(WORKED, MODEL, seed=3))
    t = rep.trials[0]
    assert t.correct and t.load == Fraction(21, 5) == rep.analytic_L
    assert (t.coded_symbols, t.uncoded_symbols, t.strategy) == (36, 48, "uncoded")
    assert len(t.Q) == 4 and t.makespan >= 6


def test_same_seed_same_report():
    a = run_single(SimConfig(WORKED, MODEL, seed=11)).to_json()
    b = run_single(SimConfig(WORKED, MODEL, seed=11)).to_json()
    assert a == b


def test_instance_is_seeded():
    x = make_instance(WORKED, seed=1, trial=2)
    y = make_instance(WORKED, seed=1, trial=2)
    z = make_instance(WORKED, seed=1, trial=3)
    assert np.array_equal(x.A, y.A) and not np.array_equal(x.A, z.A)
    assert np.array_equal(x.Y, x.plan.gf.matmul(x.A, x.X))


def test_forced_finishing_set():
    rep = run_single(SimConfig(WORKED, MODEL), Q=(2, 3, 5, 6))
    assert rep.trials[0].Q == (2, 3, 5, 6) and rep.trials[0].load == Fraction(21, 5)


def test_user_matrix():
    A = np.arange(80, dtype=np.int64).reshape(20, 4)
    rep = run_single(SimConfig(WORKED, MODEL), A=A)
    assert rep.all_correct
    with pytest.raises(ValueError):
        run_single(SimConfig(WORKED, MODEL), A=A[:5])


def test_one_trial_monte_carlo_equals_single():
    single = run(SimConfig(WORKED, MODEL, seed=4))
    mc = run_monte_carlo(SimConfig(WORKED, MODEL, seed=4, trials=1, mode=MONTE_CARLO))
    assert single.to_json() == mc.to_json()


def test_monte_carlo_trials_independent_of_count():
    short = run(SimConfig(WORKED, MODEL, seed=2, trials=3, mode=MONTE_CARLO))
    long = run(SimConfig(WORKED, MODEL, seed=2, trials=6, mode=MONTE_CARLO))
    assert [t.to_dict() for t in short.trials] == [t.to_dict() for t in long.trials[:3]]


def test_monte_carlo_latency_small_example():
    p = SchemeParams(K=4, q=2, mu="1/2", m=12, n=4, N=4)
    cfg = SimConfig(p, LatencyModel.shifted_exponential(2), seed=0, trials=20_000, mode=MONTE_CARLO,
                    shuffle_trials=20)
    rep = run(cfg)
    assert rep.analytic_D == Fraction(19, 6)
    assert rep.latency_rel_error < 0.02
    assert rep.mean_load == 2 and rep.all_correct
    assert sum(t.load is not None for t in rep.trials) == 20


def test_latency_only_trials():
    p = SchemeParams(K=18, q=12, mu="1/3", m=2040, n=2, N=180)
    cfg = SimConfig(p, LatencyModel.shifted_exponential(60), trials=5000, mode=MONTE_CARLO, shuffle_trials=0)
    rep = run(cfg)
    assert rep.mean_load is None and rep.load_rel_error is None
    assert rep.latency_rel_error < 0.02


def test_report_json_fields():
    doc = json.loads(run_single(SimConfig(WORKED, MODEL)).to_json())
    agg = doc["aggregates"]
    assert agg["mean_load"] == "21/5" and agg["all_correct"] is True
    assert doc["params"]["K"] == 6 and doc["latency_model"] == "shifted-exp:muN=6"


def test_bad_config():
    with pytest.raises(ValueError):
        SimConfig(WORKED, MODEL, trials=0)
    with pytest.raises(ValueError):
        SimConfig(WORKED, MODEL, mode="batch")
