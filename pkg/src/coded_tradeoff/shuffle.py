"""Greedy coded-multicast shuffle among the q servers that finished Map.

``map_values[k]`` is server k's Map output ``U_k X``: one row per coded row
in ``plan.server_rows[k]`` (same order), one column per input vector.
Output indices ``j`` are 1-based like coded-row ids; an item ``(i, j)``
denotes the scalar ``c_i · x_j``.

Every message payload is built only from the sender's own Map output, and
every recipient decodes by cancelling terms from its own Map output; each
decoded scalar is checked against the true value as it is produced.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .analysis import threshold_s
from .codec import StoragePlan


class ShuffleError(RuntimeError):
    pass


class ShuffleConsistencyError(ShuffleError):
    """A recipient decoded a value different from the one sent (a bug)."""


@dataclass(frozen=True)
class ReduceAssignment:
    Q: tuple[int, ...]
    W: dict[int, tuple[int, ...]]

    def owner(self, j: int) -> int:
        for k, outs in self.W.items():
            if j in outs:
                return k
        raise KeyError(j)


def assign_reduce_tasks(Q, N: int) -> ReduceAssignment:
    """Contiguous blocks of N/q outputs, in ascending server order."""
    Q = tuple(sorted(int(k) for k in Q))
    q = len(Q)
    if q == 0 or N % q:
        raise ValueError(f"|Q|={q} must divide N={N}")
    per = N // q
    return ReduceAssignment(Q, {k: tuple(range(idx * per + 1, (idx + 1) * per + 1)) for idx, k in enumerate(Q)})


@dataclass(frozen=True)
class NeededSet:
    S: tuple[int, ...]
    k: int
    items: tuple[tuple[int, int], ...]


def rows_by_subset(plan: StoragePlan, Q) -> dict[tuple[int, ...], tuple[int, ...]]:
    """Coded rows grouped by the exact set of servers in Q that store them."""
    Qs = set(Q)
    groups: dict[tuple[int, ...], list[int]] = defaultdict(list)
    for T, ids in plan.batches.items():
        S = tuple(k for k in T if k in Qs)
        if S:
            groups[S].extend(ids)
    return {S: tuple(sorted(v)) for S, v in groups.items()}


def _needed(groups, W, S, k) -> list[tuple[int, int]]:
    return [(i, j) for i in groups.get(S, ()) for j in W[k]]


def build_needed_sets(plan: StoragePlan, assignment: ReduceAssignment) -> list[NeededSet]:
    """Every ``V_S^k``: what k needs that exactly the servers in S hold.

    Subsets larger than the replication degree can hold nothing exclusively
    and are left out; smaller ones are listed even when empty.
    """
    Q = assignment.Q
    groups = rows_by_subset(plan, Q)
    out = []
    for size in range(1, min(plan.params.r, len(Q) - 1) + 1):
        for S in itertools.combinations(Q, size):
            for k in Q:
                if k not in S:
                    out.append(NeededSet(S, k, tuple(_needed(groups, assignment.W, S, k))))
    return out


@dataclass
class Message:
    sender: int
    recipients: tuple[int, ...]
    kind: str  # "coded" | "uncoded"
    round: int | str  # multicast size j for coded rounds, "residual" otherwise
    payload: np.ndarray
    padded: int = 0

    @property
    def symbols(self) -> int:
        return int(self.payload.size)

    def to_dict(self, with_hash: bool = True) -> dict:
        d = {
            "sender": self.sender, "recipients": list(self.recipients), "kind": self.kind,
            "round": self.round, "symbols": self.symbols, "padded": self.padded,
        }
        if with_hash:
            d["payload_sha256"] = hashlib.sha256(
                np.ascontiguousarray(self.payload, dtype="<u4").tobytes()).hexdigest()
        return d


@dataclass
class ShuffleTranscript:
    m: int
    Q: tuple[int, ...]
    s: int
    messages: list[Message] = field(default_factory=list)
    recovered: dict[int, dict[tuple[int, int], int]] = field(default_factory=dict)
    recovered_by_round: dict[tuple, int] = field(default_factory=lambda: defaultdict(int))
    strategy: str | None = None  # "uncoded" | "coded" | "none" once the residual is settled
    residual_costs: dict[str, int | None] = field(default_factory=dict)

    def symbols(self, kind: str | None = None) -> int:
        return sum(msg.symbols for msg in self.messages if kind is None or msg.kind == kind)

    def write_jsonl(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for msg in self.messages:
                fh.write(json.dumps(msg.to_dict()) + "\n")


def measure_load(transcript: ShuffleTranscript) -> Fraction:
    """Transmitted symbols normalized by the m symbols of one output vector."""
    return Fraction(transcript.symbols(), transcript.m)


class _Local:
    """Read access to one server's Map output, refusing rows it does not store."""

    def __init__(self, plan: StoragePlan, k: int, Z: np.ndarray):
        rows = plan.server_rows[k]
        Z = np.asarray(Z, dtype=np.int64)
        if Z.shape != (len(rows), plan.params.N):
            raise ValueError(f"server {k} map output has shape {Z.shape}, "
                             f"expected {(len(rows), plan.params.N)}")
        self.k = k
        self.Z = Z
        self.pos = np.full(plan.params.coded_rows + 1, -1, dtype=np.int64)
        self.pos[list(rows)] = np.arange(len(rows))

    def values(self, items) -> np.ndarray:
        if not items:
            return np.zeros(0, dtype=np.int64)
        arr = np.asarray(items, dtype=np.int64)
        p = self.pos[arr[:, 0]]
        if np.any(p < 0):
            bad = int(arr[np.flatnonzero(p < 0)[0], 0])
            raise ShuffleError(f"server {self.k} does not store coded row {bad}")
        return self.Z[p, arr[:, 1] - 1]


def _locals(plan, assignment, map_values) -> dict[int, _Local]:
    missing = [k for k in assignment.Q if k not in map_values]
    if missing:
        raise ValueError(f"map output missing for servers {missing}")
    return {k: _Local(plan, k, map_values[k]) for k in assignment.Q}


def _xor_padded(parts, length) -> np.ndarray:
    out = np.zeros(length, dtype=np.int64)
    for p in parts:
        out[: p.size] ^= p
    return out


def _split(items, j) -> tuple[list[list], int]:
    seg = -(-len(items) // j) if items else 0
    return [items[t * seg:(t + 1) * seg] for t in range(j)], seg


def _round_sizes(groups, W, Q, j) -> list[int]:
    """Message lengths of one greedy round, without touching payloads."""
    sizes = []
    for S in itertools.combinations(Q, j + 1):
        seg = max(-(-len(groups.get(tuple(x for x in S if x != k), ())) * len(W[k]) // j) for k in S)
        if seg:
            sizes.extend([seg] * len(S))
    return sizes


def _coded_round(plan, assignment, locs, groups, j, transcript) -> None:
    Q, W = assignment.Q, assignment.W
    for S in itertools.combinations(Q, j + 1):
        segs = {}
        seg_len = 0
        for k in S:
            rest = tuple(x for x in S if x != k)
            parts, seg = _split(_needed(groups, W, rest, k), j)
            segs[k] = dict(zip(rest, parts))
            seg_len = max(seg_len, seg)
        if seg_len == 0:
            continue
        for i in S:
            others = [k for k in S if k != i]
            comps = [locs[i].values(segs[k][i]) for k in others]
            payload = _xor_padded(comps, seg_len)
            used = sum(len(segs[k][i]) for k in others)
            msg = Message(i, tuple(others), "coded", j, payload, padded=seg_len * len(others) - used)
            transcript.messages.append(msg)
            for k in others:
                own = segs[k][i]
                if not own:
                    continue
                cancel = _xor_padded([locs[k].values(segs[kk][i]) for kk in others if kk != k], seg_len)
                got = (payload ^ cancel)[: len(own)]
                truth = comps[others.index(k)]
                if not np.array_equal(got, truth):
                    raise ShuffleConsistencyError(
                        f"server {k} mis-decoded a round-{j} multicast from server {i} in subset {S}")
                rec = transcript.recovered[k]
                for item, v in zip(own, got.tolist()):
                    rec[item] = v
                transcript.recovered_by_round[(j, k)] += len(own)


def run_coded_rounds(plan: StoragePlan, assignment: ReduceAssignment, map_values,
                     s: int | None = None) -> ShuffleTranscript:
    """Greedy multicast rounds for j = ⌊μq⌋ down to s (default: the threshold s_q)."""
    p = plan.params
    if s is None:
        s = threshold_s(p.K, len(assignment.Q), p.mu)
    locs = _locals(plan, assignment, map_values)
    groups = rows_by_subset(plan, assignment.Q)
    transcript = ShuffleTranscript(p.m, assignment.Q, s, recovered={k: {} for k in assignment.Q})
    for j in range(min(p.r, len(assignment.Q) - 1), max(s, 1) - 1, -1):
        _coded_round(plan, assignment, locs, groups, j, transcript)
    return transcript


def _residual_plan(plan, assignment, transcript, groups):
    """Unicasts (sender, recipient, items) that complete every server's demand."""
    p = plan.params
    Q, W = assignment.Q, assignment.W
    sends: dict[tuple[int, int], list] = defaultdict(list)
    for k in Q:
        own = set(plan.server_rows[k])
        order = sorted((S for S in groups if k not in S), key=lambda S: (-len(S), S))
        candidates = [(i, min(S)) for S in order for i in groups[S]]
        for j in W[k]:
            known_set = own | {i for (i, jj) in transcript.recovered[k] if jj == j}
            known = sorted(known_set)
            pool = [(i, src) for i, src in candidates if i not in known_set]
            if plan.generator_kind == "vandermonde":
                need = max(p.m - len(known), 0)
                picked = pool[:need]
            else:
                rows = known + [i for i, _ in pool]
                basis = plan.gf.row_basis(plan.generator_rows(rows), limit=p.m) if rows else []
                need = p.m - sum(1 for b in basis if b < len(known))
                chosen = {rows[b] for b in basis if b >= len(known)}
                picked = [(i, src) for i, src in pool if i in chosen]
            if len(picked) < need:
                raise ShuffleError(f"server {k} cannot collect m={p.m} coded values for output {j}")
            for i, src in picked:
                sends[(src, k)].append((i, j))
    return sends


def finish_residual(plan: StoragePlan, assignment: ReduceAssignment, transcript: ShuffleTranscript,
                    map_values) -> ShuffleTranscript:
    """Complete the shuffle with the cheaper residual strategy; updates ``transcript``.

    Strategy 1 unicasts exactly the missing values.  Strategy 2 runs one more
    greedy round at j = s-1, which may over-deliver; it is used only when
    strictly cheaper and s >= 2.
    """
    locs = _locals(plan, assignment, map_values)
    groups = rows_by_subset(plan, assignment.Q)
    sends = _residual_plan(plan, assignment, transcript, groups)
    cost1 = sum(len(v) for v in sends.values())
    s = transcript.s
    cost2 = sum(_round_sizes(groups, assignment.W, assignment.Q, s - 1)) if s >= 2 else None
    transcript.residual_costs = {"uncoded": cost1, "coded": cost2}
    if cost1 == 0:
        transcript.strategy = "none"
        return transcript
    if cost2 is not None and cost2 < cost1:
        transcript.strategy = "coded"
        _coded_round(plan, assignment, locs, groups, s - 1, transcript)
        return transcript
    transcript.strategy = "uncoded"
    for (src, dst), items in sorted(sends.items()):
        vals = locs[src].values(items)
        transcript.messages.append(Message(src, (dst,), "uncoded", "residual", vals))
        rec = transcript.recovered[dst]
        for item, v in zip(items, vals.tolist()):
            rec[item] = v
        transcript.recovered_by_round[("residual", dst)] += len(items)
    return transcript


def run_shuffle(plan: StoragePlan, assignment: ReduceAssignment, map_values) -> ShuffleTranscript:
    transcript = run_coded_rounds(plan, assignment, map_values)
    return finish_residual(plan, assignment, transcript, map_values)


def decode_sets(plan: StoragePlan, assignment: ReduceAssignment, transcript: ShuffleTranscript,
                map_values) -> dict[int, tuple[list[int], np.ndarray]]:
    """Per output j: coded-row ids and matching values available at its reducer."""
    out = {}
    for k in assignment.Q:
        own_rows = list(plan.server_rows[k])
        Z = np.asarray(map_values[k], dtype=np.int64)
        by_output: dict[int, list] = defaultdict(list)
        for (i, j), v in transcript.recovered[k].items():
            by_output[j].append((i, v))
        for j in assignment.W[k]:
            extra = sorted(by_output[j])
            rows = own_rows + [i for i, _ in extra]
            vals = np.concatenate([Z[:, j - 1], np.asarray([v for _, v in extra], dtype=np.int64)])
            out[j] = (rows, vals)
    return out


def per_output_recovered(transcript: ShuffleTranscript, assignment: ReduceAssignment, j_round) -> dict[int, Fraction]:
    """Scalars delivered per reduced output to each server in round ``j_round``."""
    return {k: Fraction(transcript.recovered_by_round.get((j_round, k), 0), len(assignment.W[k]))
            for k in assignment.Q}


def expected_round_recovery(plan: StoragePlan, q: int, j: int) -> int:
    """Closed-form per-output recovery count of round j."""
    p = plan.params
    return math.comb(q - 1, j) * math.comb(p.K - q, p.r - j) * p.batch_size
