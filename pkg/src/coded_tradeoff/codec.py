"""MDS-coded storage placement and Reduce-side decoding.

The ``(K/q)·m`` coded rows ``c_i = g_i · A`` are split into equal batches,
one per ``⌊μq⌋``-subset ``T`` of servers, and batch ``B_T`` is stored at every
server in ``T``.  Rows and servers are numbered from 1 throughout.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np

from .gf import DEFAULT_W, GF2w, SingularMatrixError, field

PLAN_FORMAT = "coded-tradeoff/storage-plan"
PLAN_VERSION = 1
DEFAULT_SUBSET_CAP = 10_000


class ParamError(ValueError):
    """A scheme parameter violates a named constraint."""

    def __init__(self, constraint: str, message: str):
        super().__init__(f"{constraint}: {message}")
        self.constraint = constraint


class PlanError(ValueError):
    pass


class DecodeError(ValueError):
    pass


def as_fraction(value) -> Fraction:
    """Parse ``1/3``, ``0.5``, ints or Fractions exactly."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


def stored_per_batch(K: int, q: int, mu, m: int) -> Fraction:
    r = math.floor(as_fraction(mu) * q)
    return Fraction(m * K, q * math.comb(K, r))


def padded_m(K: int, q: int, mu, m: int) -> int:
    """Smallest ``m' >= m`` for which every batch has an integral size."""
    r = math.floor(as_fraction(mu) * q)
    denom = q * math.comb(K, r)
    step = denom // math.gcd(denom, K)
    return -(-m // step) * step


@dataclass(frozen=True)
class SchemeParams:
    K: int
    q: int
    mu: Fraction
    m: int
    n: int
    N: int
    w: int = DEFAULT_W

    def __post_init__(self):
        object.__setattr__(self, "mu", as_fraction(self.mu))
        self.validate()

    @property
    def r(self) -> int:
        """Replication degree ``⌊μq⌋`` of every coded row."""
        return math.floor(self.mu * self.q)

    @property
    def mu_bar(self) -> Fraction:
        return Fraction(self.r, self.q)

    @property
    def coded_rows(self) -> int:
        return self.K * self.m // self.q

    @property
    def n_batches(self) -> int:
        return math.comb(self.K, self.r)

    @property
    def batch_size(self) -> int:
        return int(stored_per_batch(self.K, self.q, self.mu, self.m))

    @property
    def rows_per_server(self) -> int:
        return self.r * self.m // self.q

    def validate(self) -> None:
        K, q, mu, m, N = self.K, self.q, self.mu, self.m, self.N
        for name in ("K", "q", "m", "n", "N", "w"):
            if int(getattr(self, name)) < 1:
                raise ParamError("positive", f"{name} must be >= 1")
        if not Fraction(1, K) <= mu <= 1:
            raise ParamError("storage_range", f"need 1/K <= mu <= 1, got mu={mu}, K={K}")
        if not math.ceil(1 / mu) <= q <= K:
            raise ParamError(
                "wait_range", f"need ceil(1/mu)={math.ceil(1 / mu)} <= q <= K={K}, got q={q}"
            )
        if N % q:
            raise ParamError("reduce_divisibility", f"q={q} must divide N={N}")
        if (K * m) % q:
            raise ParamError("coded_row_divisibility", f"q={q} must divide K*m={K * m}")
        bs = stored_per_batch(K, q, mu, m)
        if bs.denominator != 1 or bs < 1:
            raise ParamError(
                "batch_divisibility",
                f"batch size m*K/(q*C(K,{self.r}))={bs} is not a positive integer; "
                f"smallest valid m is {padded_m(K, q, mu, m)}",
            )
        if (1 << self.w) < self.coded_rows:
            raise ParamError(
                "field_size",
                f"GF(2^{self.w}) has fewer than {self.coded_rows} distinct evaluation points",
            )

    def to_dict(self) -> dict:
        return {
            "K": self.K, "q": self.q, "mu": str(self.mu),
            "m": self.m, "n": self.n, "N": self.N, "w": self.w,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SchemeParams":
        return cls(
            K=int(d["K"]), q=int(d["q"]), mu=as_fraction(d["mu"]),
            m=int(d["m"]), n=int(d["n"]), N=int(d["N"]), w=int(d.get("w", DEFAULT_W)),
        )


@dataclass(frozen=True, eq=False)
class StoragePlan:
    params: SchemeParams
    generator_kind: str
    generator_spec: tuple
    batches: dict  # server subset T (sorted tuple) -> tuple of coded-row ids
    gf: GF2w = dc_field(repr=False, default=None)

    def __post_init__(self):
        if self.gf is None:
            object.__setattr__(self, "gf", field(self.params.w))

    @cached_property
    def generator(self) -> np.ndarray:
        p = self.params
        if self.generator_kind == "vandermonde":
            G = self.gf.vandermonde(list(self.generator_spec), p.m)
        elif self.generator_kind == "random":
            (seed,) = self.generator_spec
            G = self.gf.random((p.coded_rows, p.m), _mds_rng(seed))
        else:
            raise PlanError(f"unknown generator kind {self.generator_kind!r}")
        G.setflags(write=False)
        return G

    @cached_property
    def server_rows(self) -> dict[int, tuple[int, ...]]:
        rows: dict[int, list[int]] = {k: [] for k in range(1, self.params.K + 1)}
        for T, ids in self.batches.items():
            for k in T:
                rows[k].extend(ids)
        return {k: tuple(sorted(v)) for k, v in rows.items()}

    @cached_property
    def row_holders(self) -> dict[int, tuple[int, ...]]:
        """Coded-row id -> servers storing it."""
        holders: dict[int, tuple[int, ...]] = {}
        for T, ids in self.batches.items():
            for i in ids:
                holders[i] = T
        return holders

    def generator_rows(self, rows) -> np.ndarray:
        return self.generator[np.asarray(rows, dtype=np.int64) - 1]

    def to_dict(self) -> dict:
        gen = {"kind": self.generator_kind}
        if self.generator_kind == "vandermonde":
            gen["points"] = list(self.generator_spec)
        else:
            gen["seed"] = self.generator_spec[0]
        return {
            "format": PLAN_FORMAT,
            "version": PLAN_VERSION,
            "params": self.params.to_dict(),
            "field": {"w": self.gf.w, "poly": hex(self.gf.poly)},
            "generator": gen,
            "batches": [
                {"servers": list(T), "rows": list(ids)} for T, ids in self.batches.items()
            ],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "StoragePlan":
        try:
            if d.get("format") != PLAN_FORMAT:
                raise PlanError(f"not a storage plan (format={d.get('format')!r})")
            if d.get("version") != PLAN_VERSION:
                raise PlanError(f"unsupported plan version {d.get('version')!r}")
            params = SchemeParams.from_dict(d["params"])
            fld = d.get("field", {})
            gf = field(int(fld.get("w", params.w)), int(str(fld["poly"]), 0) if "poly" in fld else None)
            gen = d["generator"]
            kind = gen["kind"]
            if kind == "vandermonde":
                spec = tuple(int(x) for x in gen["points"])
                if len(spec) != params.coded_rows:
                    raise PlanError(f"expected {params.coded_rows} evaluation points, got {len(spec)}")
                gf.check(spec)
                if len(set(spec)) != len(spec):
                    raise PlanError("evaluation points must be distinct")
            elif kind == "random":
                spec = (int(gen["seed"]),)
            else:
                raise PlanError(f"unknown generator kind {kind!r}")
            batches = {}
            for b in d["batches"]:
                T = tuple(sorted(int(k) for k in b["servers"]))
                if any(not 1 <= k <= params.K for k in T):
                    raise PlanError(f"batch servers {T} outside 1..{params.K}")
                ids = tuple(int(i) for i in b["rows"])
                if any(not 1 <= i <= params.coded_rows for i in ids):
                    raise PlanError(f"batch rows outside 1..{params.coded_rows}")
                if T in batches:
                    raise PlanError(f"duplicate batch for servers {T}")
                if len(T) != params.r or len(ids) != params.batch_size:
                    raise PlanError(f"batch {T} must have {params.r} servers and "
                                    f"{params.batch_size} rows")
                batches[T] = ids
            placed = sorted(i for ids in batches.values() for i in ids)
            if placed != list(range(1, params.coded_rows + 1)):
                raise PlanError(f"batches must place each of the {params.coded_rows} coded rows exactly once")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, PlanError):
                raise
            raise PlanError(f"invalid plan document: {exc}") from exc
        return cls(params, kind, spec, batches, gf)

    @classmethod
    def from_json(cls, text: str) -> "StoragePlan":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PlanError(f"plan is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise PlanError("plan document must be a JSON object")
        return cls.from_dict(doc)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "StoragePlan":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise PlanError(f"cannot read plan {path}: {exc}") from exc
        return cls.from_json(text)


def _mds_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x4D4453])))


def build_storage_plan(params: SchemeParams, random_mds_seed: int | None = None,
                       subset_cap: int = DEFAULT_SUBSET_CAP) -> StoragePlan:
    """Lay out the coded rows over the servers.

    Subsets ``T`` are enumerated lexicographically, so server 1 owns the
    lowest-numbered rows.  With ``random_mds_seed`` the generator is drawn
    at random and the plan is rejected unless every q-subset decodes.
    """
    bs = params.batch_size
    batches = {}
    for b, T in enumerate(itertools.combinations(range(1, params.K + 1), params.r)):
        batches[T] = tuple(range(b * bs + 1, (b + 1) * bs + 1))
    if random_mds_seed is None:
        return StoragePlan(params, "vandermonde", tuple(range(params.coded_rows)), batches)
    plan = StoragePlan(params, "random", (int(random_mds_seed),), batches)
    report = verify_decodability(plan, cap=subset_cap, seed=random_mds_seed)
    if not report.passed:
        raise PlanError(
            f"random generator (seed {random_mds_seed}) is not decodable for "
            f"servers {report.witness}: {report.reason}"
        )
    return plan


def server_storage_matrix(plan: StoragePlan, k: int, A) -> np.ndarray:
    """``U_k = E_k A``: the coded rows server ``k`` stores."""
    A = np.asarray(A, dtype=np.int64)
    if A.ndim != 2 or A.shape[0] != plan.params.m:
        raise ValueError(f"A must have {plan.params.m} rows, got shape {A.shape}")
    if k not in plan.server_rows:
        raise ValueError(f"server {k} outside 1..{plan.params.K}")
    return plan.gf.matmul(plan.generator_rows(plan.server_rows[k]), A)


@dataclass
class DecodabilityReport:
    passed: bool
    checked: int
    total: int
    exhaustive: bool
    witness: tuple[int, ...] | None = None
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "passed": self.passed, "checked": self.checked, "total": self.total,
            "exhaustive": self.exhaustive,
            "witness": list(self.witness) if self.witness else None,
            "reason": self.reason,
        }


def verify_decodability(plan: StoragePlan, cap: int = DEFAULT_SUBSET_CAP,
                        samples: int | None = None, seed: int = 0) -> DecodabilityReport:
    """Check every q-subset (or a sample of them) holds rank-m generator rows.

    The check is exhaustive when ``C(K, q) <= cap`` and ``samples`` is not
    given; otherwise ``samples`` subsets (default ``cap``) are drawn.
    """
    p = plan.params
    total = math.comb(p.K, p.q)
    exhaustive = samples is None and total <= cap
    if exhaustive:
        subsets = itertools.combinations(range(1, p.K + 1), p.q)
        count = total
    else:
        count = min(samples if samples is not None else cap, total)
        rng = np.random.default_rng(seed)
        subsets = (
            tuple(sorted(int(x) for x in rng.choice(np.arange(1, p.K + 1), p.q, replace=False)))
            for _ in range(count)
        )
    checked = 0
    for Q in subsets:
        checked += 1
        union = sorted(set().union(*(plan.server_rows[k] for k in Q)))
        if len(union) < p.m:
            return DecodabilityReport(False, checked, total, exhaustive, Q,
                                      f"only {len(union)} distinct coded rows < m={p.m}")
        G = plan.generator_rows(union)
        # a full-rank m x m block certifies rank m; fall back to all rows
        rank = plan.gf.rank(G[: p.m])
        if rank < p.m:
            rank = plan.gf.rank(G)
        if rank < p.m:
            return DecodabilityReport(False, checked, total, exhaustive, Q,
                                      f"generator rank {rank} < m={p.m}")
    return DecodabilityReport(True, checked, total, exhaustive)


def decode_block(plan: StoragePlan, rows, values) -> np.ndarray:
    """Solve ``G_D · Y = V`` for ``Y`` (m × outputs) from coded rows ``D``.

    ``values`` has one row per entry of ``rows`` and one column per output
    vector sharing that row set.  Extra rows beyond a basis are ignored.
    """
    rows = list(rows)
    m = plan.params.m
    if len(set(rows)) != len(rows):
        raise DecodeError("duplicate coded-row indices")
    if len(rows) < m:
        raise DecodeError(f"need at least m={m} coded values, got {len(rows)}")
    V = np.asarray(values, dtype=np.int64)
    vec = V.ndim == 1
    if vec:
        V = V[:, None]
    G = plan.generator_rows(rows)
    if plan.generator_kind == "vandermonde":
        # distinct points: any m rows are independent
        basis = list(range(m))
    else:
        basis = plan.gf.row_basis(G, limit=m)
    if len(basis) < m:
        raise DecodeError(f"coded rows span rank {len(basis)} < m={m}")
    try:
        Y = plan.gf.solve(G[basis], V[basis])
    except SingularMatrixError as exc:  # pragma: no cover - basis is full rank
        raise DecodeError(str(exc)) from exc
    return Y[:, 0] if vec else Y


def reduce_decode(plan: StoragePlan, values) -> np.ndarray:
    """Recover one output vector from ``(row id, c_i·x)`` pairs."""
    values = list(values)
    rows = [int(i) for i, _ in values]
    return decode_block(plan, rows, [int(v) for _, v in values])
