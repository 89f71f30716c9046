"""Closed-form latency-load pairs, the converse bound, and their envelopes.

Loads are exact ``Fraction`` values in units of one output vector (m
symbols).  Latencies are exact whenever the latency model is.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

from .codec import as_fraction
from .stragglers import LatencyModel, expected_order_statistic

GOLDEN_GAP = 3 + math.sqrt(5)


def _check(K: int, q: int, mu: Fraction) -> None:
    if not Fraction(1, K) <= mu <= 1:
        raise ValueError(f"need 1/K <= mu <= 1, got mu={mu}, K={K}")
    if not math.ceil(1 / mu) <= q <= K:
        raise ValueError(f"need ceil(1/mu) <= q <= K, got q={q}, K={K}, mu={mu}")


def replication(q: int, mu) -> int:
    return math.floor(as_fraction(mu) * q)


def b_coefficient(K: int, q: int, mu, j: int) -> Fraction:
    """Normalized count of coded rows a server can receive at coding gain j."""
    mu = as_fraction(mu)
    r = replication(q, mu)
    if not 0 <= j <= r:
        raise ValueError(f"j={j} outside 0..{r}")
    return Fraction(math.comb(q - 1, j) * math.comb(K - q, r - j) * K, q * math.comb(K, r))


def threshold_s(K: int, q: int, mu) -> int:
    """Smallest multicast size at which the greedy rounds stop.

    The smallest ``s`` whose tail ``sum_{j>=s} B_j`` fits in ``1 - μ̄``,
    skipping values of ``s`` with ``B_s = 0``: such rounds are empty, and
    without the skip the infimum degenerates to 0 whenever ``q = K``.
    """
    mu = as_fraction(mu)
    _check(K, q, mu)
    r = replication(q, mu)
    budget = 1 - Fraction(r, q)
    B = [b_coefficient(K, q, mu, j) for j in range(r + 1)]
    for s in range(r + 2):
        if s <= r and B[s] == 0:
            continue
        if sum(B[s:], Fraction(0)) <= budget:
            return s
    raise AssertionError("unreachable: the empty tail always fits")  # pragma: no cover


class LoadTerms(NamedTuple):
    s: int
    coded: Fraction            # greedy multicast rounds j = s..r
    residual_uncoded: Fraction  # strategy 1: unicast what is still missing
    residual_coded: Fraction | None  # strategy 2: one more round at j = s-1

    @property
    def total(self) -> Fraction:
        if self.residual_coded is None:
            return self.coded + self.residual_uncoded
        return self.coded + min(self.residual_uncoded, self.residual_coded)


def load_terms(K: int, q: int, mu, N: int) -> LoadTerms:
    mu = as_fraction(mu)
    _check(K, q, mu)
    r = replication(q, mu)
    s = threshold_s(K, q, mu)
    B = [b_coefficient(K, q, mu, j) for j in range(r + 1)]
    coded = N * sum((B[j] / j for j in range(s, r + 1)), Fraction(0))
    residual = N * (1 - Fraction(r, q) - sum(B[s:], Fraction(0)))
    extra = N * B[s - 1] / (s - 1) if s >= 2 else None
    return LoadTerms(s, coded, residual, extra)


def achievable_load(K: int, q: int, mu, N: int) -> Fraction:
    """Communication load of the coded scheme when waiting for q servers."""
    return load_terms(K, q, mu, N).total


def achievable_latency(K: int, q: int, mu, N: int, model: LatencyModel | None = None) -> Fraction:
    if model is None:
        model = LatencyModel.shifted_exponential(as_fraction(mu) * N)
    return expected_order_statistic(model, K, q)


def lower_bound_load(K: int, q: int, mu, N: int) -> Fraction:
    """Converse bound on the load of any scheme that waits for q servers."""
    mu = as_fraction(mu)
    if q < 2:
        return Fraction(0)
    best = Fraction(0)
    for t in range(1, q):
        val = (1 - min(t * mu, Fraction(1))) * q / (math.ceil(Fraction(q, t)) * (q - t))
        best = max(best, val)
    return N * best


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


class Envelope:
    """Lower convex envelope of a point set, as a piecewise-linear function."""

    def __init__(self, points: Sequence[tuple]):
        pts = sorted(set((p[0], p[1]) for p in points))
        hull: list[tuple] = []
        for p in pts:
            if hull and hull[-1][0] == p[0]:
                continue  # same abscissa, higher ordinate
            while len(hull) >= 2 and _cross(hull[-2], hull[-1], p) <= 0:
                hull.pop()
            hull.append(p)
        self.vertices = hull

    def __call__(self, x):
        v = self.vertices
        if not v:
            raise ValueError("empty envelope")
        if x < v[0][0] or x > v[-1][0]:
            warnings.warn(f"envelope evaluated outside [{float(v[0][0]):.6g}, "
                          f"{float(v[-1][0]):.6g}] at {float(x):.6g}; clamping", stacklevel=2)
            return v[0][1] if x < v[0][0] else v[-1][1]
        for (x0, y0), (x1, y1) in zip(v, v[1:]):
            if x0 <= x <= x1:
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        return v[0][1]

    def is_convex(self) -> bool:
        return all(_cross(a, b, c) > 0 for a, b, c in zip(self.vertices, self.vertices[1:], self.vertices[2:]))


@dataclass(frozen=True)
class TradeoffPoint:
    q: int
    D: Fraction
    L_ach: Fraction
    L_lb: Fraction
    gap: Fraction | None  # envelope ratio at D; None when both envelopes are 0


@dataclass
class TradeoffCurve:
    K: int
    mu: Fraction
    N: int
    points: list[TradeoffPoint]
    envelope_ach: Envelope
    envelope_lb: Envelope

    @property
    def max_gap(self) -> Fraction | None:
        gaps = [p.gap for p in self.points if p.gap is not None]
        return max(gaps) if gaps else None


def tradeoff_curve(K: int, mu, N: int, model: LatencyModel | None = None) -> TradeoffCurve:
    """All (D(q), L(q), L̄(q)) for ``q = ⌈1/μ⌉..K`` plus both envelopes.

    ``gap`` compares the two envelopes at ``D(q)``; both are linear between
    consecutive ``D(q)``, so their ratio peaks at one of these abscissae.
    """
    mu = as_fraction(mu)
    if model is None:
        model = LatencyModel.shifted_exponential(mu * N)
    qs = range(math.ceil(1 / mu), K + 1)
    raw = [(q, expected_order_statistic(model, K, q), achievable_load(K, q, mu, N),
            lower_bound_load(K, q, mu, N)) for q in qs]
    env_a = Envelope([(d, la) for _, d, la, _ in raw])
    env_l = Envelope([(d, lb) for _, d, _, lb in raw])
    points = []
    for q, d, la, lb in raw:
        ea, el = env_a(d), env_l(d)
        gap = None if el == 0 else Fraction(ea) / Fraction(el)
        points.append(TradeoffPoint(q, d, la, lb, gap))
    return TradeoffCurve(K, mu, N, points, env_a, env_l)


def gap_report(K: int, mu, N: int, model: LatencyModel | None = None):
    """Per-q envelope ratio achievable/lower and the maximum over q."""
    curve = tradeoff_curve(K, mu, N, model)
    return [(p.q, p.gap) for p in curve.points], curve.max_gap


def _below_golden(x: Fraction) -> bool:
    # x < 3 + sqrt(5), decided exactly
    d = x - 3
    return d < 0 or d * d < 5


def appendix_gap_check(K: int, mu) -> tuple[Fraction, bool]:
    """Ratio of the full-wait load to its lower bound, and whether it is < 3+√5."""
    mu = as_fraction(mu)
    if (mu * K).denominator != 1:
        raise ValueError(f"mu*K must be an integer, got {mu * K}")
    ach = achievable_load(K, K, mu, 1)
    lb = lower_bound_load(K, K, mu, 1)
    ratio = Fraction(0) if ach == 0 else ach / lb
    return ratio, _below_golden(ratio)


# ---- CSV ----

CSV_COLUMNS = ("q", "D", "L_ach", "L_lb", "gap")


def _fmt(x, precision: int, rational: bool) -> str:
    if x is None:
        return ""
    x = Fraction(x)
    if rational:
        return str(x)
    return f"{float(x):.{precision}f}"


def curve_rows(curve: TradeoffCurve, precision: int = 6, rational: bool = False) -> list[dict]:
    return [
        {"q": str(p.q), "D": _fmt(p.D, precision, rational), "L_ach": _fmt(p.L_ach, precision, rational),
         "L_lb": _fmt(p.L_lb, precision, rational), "gap": _fmt(p.gap, precision, rational)}
        for p in curve.points
    ]


def curve_to_csv(curve: TradeoffCurve, precision: int = 6, rational: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(curve_rows(curve, precision, rational))
    return buf.getvalue()


def parse_curve_csv(text: str) -> list[dict]:
    """Read a table written by ``curve_to_csv`` back into Fractions."""
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append({k: (int(v) if k == "q" else (Fraction(v) if v else None)) for k, v in rec.items()})
    return rows


def curve_to_dict(curve: TradeoffCurve, precision: int = 6, rational: bool = False) -> dict:
    conv = (lambda x: None if x is None else str(Fraction(x))) if rational else \
        (lambda x: None if x is None else round(float(x), precision))
    return {
        "K": curve.K, "mu": str(curve.mu), "N": curve.N,
        "points": [{"q": p.q, "D": conv(p.D), "L_ach": conv(p.L_ach), "L_lb": conv(p.L_lb),
                    "gap": conv(p.gap)} for p in curve.points],
        "envelope_ach": [[conv(x), conv(y)] for x, y in curve.envelope_ach.vertices],
        "envelope_lb": [[conv(x), conv(y)] for x, y in curve.envelope_lb.vertices],
        "max_gap": conv(curve.max_gap),
    }


def lower_bound_maximizer(K: int, q: int, mu) -> int | None:
    """The cut size t attaining the converse bound (smallest on ties)."""
    mu = as_fraction(mu)
    if q < 2:
        return None
    vals = [((1 - min(t * mu, Fraction(1))) * q / (math.ceil(Fraction(q, t)) * (q - t)), -t)
            for t in range(1, q)]
    return -max(vals)[1]
