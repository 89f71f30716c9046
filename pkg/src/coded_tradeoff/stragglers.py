"""Map-phase latency models and order statistics.

The default model is the shifted exponential with CDF
``1 - exp(-(t/μN - 1))`` on ``t >= μN``, whose q-th order statistic out of K
has mean ``μN (1 + sum_{j=K-q+1}^{K} 1/j)``.  A table model supplies
``g(K, q)`` directly when no sampling distribution is available.

Randomness comes from numpy's Philox (a counter-based generator) keyed by
``SeedSequence([seed, stream, index])``, so a given (seed, trial) pair maps
to the same draws on every platform and in any execution order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .codec import as_fraction

SHIFTED_EXPONENTIAL = "shifted_exponential"
USER_TABLE = "user_table"

LATENCY_STREAM = 1
DATA_STREAM = 2


def philox(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, index])))


@dataclass(frozen=True)
class LatencyModel:
    kind: str
    mu_N: Fraction
    table: dict = field(default_factory=dict)  # (K, q) -> g(K, q)

    def __post_init__(self):
        object.__setattr__(self, "mu_N", as_fraction(self.mu_N))
        if self.mu_N <= 0:
            raise ValueError(f"mu_N must be positive, got {self.mu_N}")
        if self.kind not in (SHIFTED_EXPONENTIAL, USER_TABLE):
            raise ValueError(f"unknown latency model kind {self.kind!r}")

    @classmethod
    def shifted_exponential(cls, mu_N) -> "LatencyModel":
        return cls(SHIFTED_EXPONENTIAL, mu_N)

    @classmethod
    def from_table(cls, mu_N, table: dict) -> "LatencyModel":
        return cls(USER_TABLE, mu_N, {(int(K), int(q)): as_fraction(g) for (K, q), g in table.items()})

    @classmethod
    def load_table(cls, path) -> "LatencyModel":
        """Read ``{"mu_N": v, "g": [{"K":..,"q":..,"g":..}, ...]}``."""
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        table = {(e["K"], e["q"]): as_fraction(str(e["g"])) for e in doc["g"]}
        return cls.from_table(as_fraction(str(doc["mu_N"])), table)

    @classmethod
    def parse(cls, text: str, default_mu_N=None) -> "LatencyModel":
        """Parse ``shifted-exp:muN=<v>``, ``shifted-exp`` or ``table:<file.json>``."""
        kind, _, rest = text.partition(":")
        if kind in ("shifted-exp", "shifted_exponential"):
            if not rest:
                if default_mu_N is None:
                    raise ValueError("shifted-exp needs muN=<value>")
                return cls.shifted_exponential(default_mu_N)
            key, _, value = rest.partition("=")
            if key.strip() not in ("muN", "mu_N"):
                raise ValueError(f"unknown latency option {key!r}")
            return cls.shifted_exponential(as_fraction(value.strip()))
        if kind == "table":
            return cls.load_table(rest)
        raise ValueError(f"unknown latency model {text!r}")

    def describe(self) -> str:
        if self.kind == SHIFTED_EXPONENTIAL:
            return f"shifted-exp:muN={self.mu_N}"
        return f"table:{len(self.table)} entries, muN={self.mu_N}"


def expected_order_statistic(model: LatencyModel, K: int, q: int) -> Fraction:
    """Mean of the q-th smallest of K i.i.d. latencies, exactly."""
    if not 1 <= q <= K:
        raise ValueError(f"need 1 <= q <= K, got q={q}, K={K}")
    if model.kind == SHIFTED_EXPONENTIAL:
        harmonic = sum((Fraction(1, j) for j in range(K - q + 1, K + 1)), Fraction(0))
        return model.mu_N * (1 + harmonic)
    try:
        return model.mu_N * model.table[(K, q)]
    except KeyError:
        raise KeyError(f"latency table has no g(K={K}, q={q})") from None


def _shifted_exp(mu_N: float, u: np.ndarray) -> np.ndarray:
    return mu_N * (1.0 - np.log1p(-u))


def sample_latencies(model: LatencyModel, K: int, seed: int, trial: int = 0) -> np.ndarray:
    """K i.i.d. Map times for one trial, by inverse CDF."""
    if model.kind != SHIFTED_EXPONENTIAL:
        raise ValueError("table latency models only define means; they cannot be sampled")
    u = philox(seed, LATENCY_STREAM, trial).random(K)
    return _shifted_exp(float(model.mu_N), u)


def sample_latency_matrix(model: LatencyModel, K: int, trials: int, seed: int) -> np.ndarray:
    """``trials × K`` latencies; row i equals ``sample_latencies(model, K, seed, i)``."""
    out = np.empty((trials, K))
    for i in range(trials):
        out[i] = sample_latencies(model, K, seed, i)
    return out


def empirical_order_statistic(model: LatencyModel, K: int, q: int, trials: int,
                              seed: int) -> float:
    """Monte-Carlo mean of the q-th order statistic from one bulk Philox stream.

    Faster than per-trial streams; used for convergence checks only.
    """
    if model.kind != SHIFTED_EXPONENTIAL:
        raise ValueError("table latency models cannot be sampled")
    u = philox(seed, LATENCY_STREAM, 2**32).random((trials, K))
    s = _shifted_exp(float(model.mu_N), u)
    kth = np.partition(s, q - 1, axis=1)[:, q - 1]
    return math.fsum(kth) / trials


def select_fastest(latencies, q: int) -> tuple[tuple[int, ...], float]:
    """Servers (1-based) of the q smallest latencies and the q-th smallest time.

    Ties go to the lower server id.
    """
    lat = list(latencies)
    if not 1 <= q <= len(lat):
        raise ValueError(f"need 1 <= q <= K={len(lat)}, got {q}")
    order = sorted(range(len(lat)), key=lambda k: (lat[k], k))[:q]
    return tuple(sorted(k + 1 for k in order)), float(lat[order[-1]])
