"""End-to-end Map / Shuffle / Reduce runs with exact verification."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .analysis import achievable_load
from .codec import (SchemeParams, StoragePlan, build_storage_plan, decode_block,
                    DecodeError)
from .shuffle import (ShuffleError, ShuffleTranscript, assign_reduce_tasks, decode_sets,
                      measure_load, run_shuffle)
from .stragglers import (DATA_STREAM, LatencyModel, expected_order_statistic, philox,
                         sample_latencies, select_fastest)

SINGLE = "single"
MONTE_CARLO = "monte_carlo"


class SimulationError(RuntimeError):
    """Internal decode or consistency failure during a run."""


@dataclass(frozen=True)
class SimConfig:
    params: SchemeParams
    model: LatencyModel
    seed: int = 0
    trials: int = 1
    mode: str = SINGLE
    verify: bool = True
    shuffle_trials: int | None = None  # trials that run the data pipeline; None = all
    random_mds_seed: int | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.mode not in (SINGLE, MONTE_CARLO):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class TrialResult:
    trial: int
    Q: tuple[int, ...]
    makespan: float
    load: Fraction | None = None
    correct: bool | None = None
    coded_symbols: int | None = None
    uncoded_symbols: int | None = None
    strategy: str | None = None

    def to_dict(self) -> dict:
        return {
            "trial": self.trial, "Q": list(self.Q), "makespan": self.makespan,
            "load": None if self.load is None else str(self.load),
            "correct": self.correct, "coded_symbols": self.coded_symbols,
            "uncoded_symbols": self.uncoded_symbols, "strategy": self.strategy,
        }


@dataclass
class SimReport:
    params: SchemeParams
    model: LatencyModel
    seed: int
    trials: list[TrialResult]
    analytic_D: Fraction
    analytic_L: Fraction
    transcript: ShuffleTranscript | None = field(default=None, repr=False)

    @property
    def mean_latency(self) -> float:
        return math.fsum(t.makespan for t in self.trials) / len(self.trials)

    @property
    def loads(self) -> list[Fraction]:
        return [t.load for t in self.trials if t.load is not None]

    @property
    def mean_load(self) -> Fraction | None:
        loads = self.loads
        return sum(loads, Fraction(0)) / len(loads) if loads else None

    @property
    def latency_rel_error(self) -> float:
        return abs(self.mean_latency - float(self.analytic_D)) / float(self.analytic_D)

    @property
    def load_rel_error(self) -> float | None:
        if self.mean_load is None:
            return None
        if self.analytic_L == 0:
            return 0.0 if self.mean_load == 0 else math.inf
        return float(abs(self.mean_load - self.analytic_L) / self.analytic_L)

    @property
    def all_correct(self) -> bool:
        return all(t.correct is not False for t in self.trials)

    def to_dict(self) -> dict:
        mean_load = self.mean_load
        return {
            "params": self.params.to_dict(),
            "latency_model": self.model.describe(),
            "seed": self.seed,
            "trials": [t.to_dict() for t in self.trials],
            "aggregates": {
                "trials": len(self.trials),
                "mean_latency": self.mean_latency,
                "analytic_D": str(self.analytic_D),
                "analytic_D_float": float(self.analytic_D),
                "latency_rel_error": self.latency_rel_error,
                "mean_load": None if mean_load is None else str(mean_load),
                "mean_load_float": None if mean_load is None else float(mean_load),
                "analytic_L": str(self.analytic_L),
                "load_rel_error": self.load_rel_error,
                "all_correct": self.all_correct,
            },
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


@dataclass
class Instance:
    """Problem data and the Map outputs of every server."""

    plan: StoragePlan
    A: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    map_values: dict[int, np.ndarray]


def make_instance(params: SchemeParams, seed: int, trial: int = 0, plan: StoragePlan | None = None,
                  A: np.ndarray | None = None) -> Instance:
    plan = plan or build_storage_plan(params)
    gf = plan.gf
    rng = philox(seed, DATA_STREAM, trial)
    if A is None:
        A = gf.random((params.m, params.n), rng)
    else:
        A = gf.check(A)
        if A.shape != (params.m, params.n):
            raise ValueError(f"A must be {params.m}x{params.n}, got {A.shape}")
    X = gf.random((params.n, params.N), rng)
    Y = gf.matmul(A, X)
    C = gf.matmul(plan.generator, A)  # all coded rows c_i
    maps = {k: gf.matmul(C[np.asarray(rows, dtype=np.int64) - 1], X)
            for k, rows in plan.server_rows.items()}
    return Instance(plan, A, X, Y, maps)


def reduce_all(instance: Instance, assignment, transcript) -> dict[int, np.ndarray]:
    """Decode every output at its reducer, grouping outputs that share a row set."""
    plan = instance.plan
    sets = decode_sets(plan, assignment, transcript, instance.map_values)
    groups: dict[tuple, list[int]] = {}
    for j, (rows, _) in sets.items():
        groups.setdefault(tuple(rows), []).append(j)
    out = {}
    for rows, js in groups.items():
        V = np.stack([sets[j][1] for j in js], axis=1)
        Y = decode_block(plan, rows, V)
        for col, j in enumerate(js):
            out[j] = Y[:, col]
    return out


def _run_trial(config: SimConfig, plan: StoragePlan, trial: int, data: bool,
               Q_override=None, A=None) -> tuple[TrialResult, ShuffleTranscript | None]:
    p = config.params
    lat = sample_latencies(config.model, p.K, config.seed, trial)
    Q, makespan = select_fastest(lat, p.q)
    if Q_override is not None:
        Q = tuple(sorted(Q_override))
        if len(Q) != p.q:
            raise ValueError(f"forced Q must have {p.q} servers")
        makespan = float(max(lat[k - 1] for k in Q))
    res = TrialResult(trial, Q, makespan)
    if not data:
        return res, None
    inst = make_instance(p, config.seed, trial, plan=plan, A=A)
    assignment = assign_reduce_tasks(Q, p.N)
    try:
        transcript = run_shuffle(plan, assignment, inst.map_values)
    except ShuffleError as exc:
        raise SimulationError(f"trial {trial}: shuffle failed for Q={Q}: {exc}") from exc
    res.load = measure_load(transcript)
    res.coded_symbols = transcript.symbols("coded")
    res.uncoded_symbols = transcript.symbols("uncoded")
    res.strategy = transcript.strategy
    if config.verify:
        try:
            decoded = reduce_all(inst, assignment, transcript)
        except DecodeError as exc:
            raise SimulationError(f"trial {trial}: reduce failed for Q={Q}: {exc}") from exc
        res.correct = len(decoded) == p.N and all(
            np.array_equal(decoded[j], inst.Y[:, j - 1]) for j in range(1, p.N + 1))
        if not res.correct:
            raise SimulationError(f"trial {trial}: decoded outputs differ from A·x")
    return res, transcript


def _report(config, trials, transcript) -> SimReport:
    p = config.params
    return SimReport(
        p, config.model, config.seed, trials,
        analytic_D=expected_order_statistic(config.model, p.K, p.q),
        analytic_L=achievable_load(p.K, p.q, p.mu, p.N),
        transcript=transcript,
    )


def run_single(config: SimConfig, Q=None, A=None, plan: StoragePlan | None = None) -> SimReport:
    """One trial (index 0): data, Map, straggler draw, shuffle, reduce, check.

    ``Q`` forces the finishing set instead of taking the fastest servers.
    """
    plan = plan or build_storage_plan(config.params, config.random_mds_seed)
    res, transcript = _run_trial(config, plan, 0, True, Q_override=Q, A=A)
    return _report(config, [res], transcript)


def run_monte_carlo(config: SimConfig, A=None, plan: StoragePlan | None = None) -> SimReport:
    """Many independent trials; trial i depends only on (seed, i).

    The first ``shuffle_trials`` trials (all by default) also run the data
    pipeline; the rest only draw latencies.
    """
    plan = plan or build_storage_plan(config.params, config.random_mds_seed)
    limit = config.trials if config.shuffle_trials is None else config.shuffle_trials
    results = []
    first = None
    for t in range(config.trials):
        res, tr = _run_trial(config, plan, t, t < limit, A=A)
        if t == 0:
            first = tr
        results.append(res)
    return _report(config, results, first)


def run(config: SimConfig, **kw) -> SimReport:
    if config.mode == SINGLE and config.trials == 1:
        return run_single(config, **kw)
    return run_monte_carlo(config, **kw)
