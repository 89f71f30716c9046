"""
Arithmetic over GF(2^w) and the small amount of dense linear algebra needed
to encode, rank-check and decode coded rows.

Field elements are plain integers in [0, 2^w).  Matrices are 2-D numpy
``int64`` arrays whose entries are field elements; every routine here treats
them as immutable and returns fresh arrays.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# Reduction polynomials, bit i = coefficient of x^i (x^w term included).
# w=8 uses the AES polynomial, which is irreducible but not primitive; the
# table builder searches for a generator instead of assuming x.
REDUCTION_POLYNOMIALS = {
    2: 0x7,
    3: 0xB,
    4: 0x13,
    5: 0x25,
    6: 0x43,
    7: 0x89,
    8: 0x11B,
    9: 0x211,
    10: 0x409,
    11: 0x805,
    12: 0x1053,
    13: 0x201B,
    14: 0x4443,
    15: 0x8003,
    16: 0x1100B,
}

DEFAULT_W = 16


class FieldError(ValueError):
    pass


class DimensionError(FieldError):
    pass


class SingularMatrixError(FieldError):
    pass


def clmul_mod(a: int, b: int, poly: int, w: int) -> int:
    """Shift-and-add product of ``a`` and ``b`` reduced modulo ``poly``."""
    r = 0
    top = 1 << w
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & top:
            a ^= poly
    return r


class GF2w:
    """GF(2^w) with log/antilog tables.

    Parameters
    ----------
    w : int
        Bits per symbol.
    poly : int, optional
        Reduction polynomial including the x^w term. Defaults to the entry in
        ``REDUCTION_POLYNOMIALS``.
    """

    def __init__(self, w: int = DEFAULT_W, poly: int | None = None):
        if poly is None:
            if w not in REDUCTION_POLYNOMIALS:
                raise FieldError(
                    f"no built-in polynomial for w={w}; "
                    f"supported: {sorted(REDUCTION_POLYNOMIALS)}"
                )
            poly = REDUCTION_POLYNOMIALS[w]
        if poly >> w != 1:
            raise FieldError(f"polynomial {poly:#x} does not have degree {w}")
        self.w = w
        self.poly = poly
        self.order = 1 << w
        self.generator, self._exp, self._log = _tables(w, poly)

    def __repr__(self) -> str:
        return f"GF2w(w={self.w}, poly={self.poly:#x})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, GF2w) and (self.w, self.poly) == (other.w, other.poly)

    def __hash__(self) -> int:
        return hash((self.w, self.poly))

    # ---- scalars / elementwise ----

    def check(self, a) -> np.ndarray:
        arr = np.asarray(a, dtype=np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= self.order):
            raise FieldError(f"value outside GF(2^{self.w})")
        return arr

    @staticmethod
    def add(a, b):
        return np.bitwise_xor(a, b)

    def mul(self, a, b):
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        out = self._exp[self._log[a] + self._log[b]]
        return out if out.ndim else int(out)

    def inv(self, a):
        a = np.asarray(a, dtype=np.int64)
        if np.any(a == 0):
            raise ZeroDivisionError("zero has no inverse")
        out = self._exp[(self.order - 1) - self._log[a]]
        return out if out.ndim else int(out)

    def div(self, a, b):
        return self.mul(a, self.inv(b))

    def pow(self, a: int, e: int) -> int:
        if a == 0:
            return 0 if e else 1
        return int(self._exp[(int(self._log[a]) * e) % (self.order - 1)])

    def random(self, shape, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.order, size=shape, dtype=np.int64)

    # ---- matrices ----

    def matmul(self, A, B) -> np.ndarray:
        A = np.atleast_2d(np.asarray(A, dtype=np.int64))
        B = np.asarray(B, dtype=np.int64)
        if B.ndim == 1:
            B = B[:, None]
        if A.shape[1] != B.shape[0]:
            raise DimensionError(f"cannot multiply {A.shape} by {B.shape}")
        out = np.zeros((A.shape[0], B.shape[1]), dtype=np.int64)
        # outer-product accumulation keeps memory at rows*cols
        for t in range(A.shape[1]):
            out ^= self.mul(A[:, t : t + 1], B[t : t + 1, :])
        return out

    def _eliminate(self, M: np.ndarray, ncols: int | None = None, full: bool = True):
        """Row echelon form in place; returns pivot (row, col) pairs.

        With ``full`` the result is reduced (zeros above pivots too), which
        ``solve`` needs; ``rank`` only clears below.
        """
        rows, cols = M.shape
        ncols = cols if ncols is None else ncols
        pivots = []
        r = 0
        for c in range(ncols):
            if r == rows:
                break
            nz = np.flatnonzero(M[r:, c])
            if nz.size == 0:
                continue
            p = r + int(nz[0])
            if p != r:
                M[[r, p]] = M[[p, r]]
            # entries left of c are already zero in rows r and below
            M[r, c:] = self.mul(M[r, c:], self.inv(int(M[r, c])))
            start = 0 if full else r + 1
            col = M[start:, c].copy()
            if full:
                col[r] = 0
            hit = np.flatnonzero(col) + start
            if hit.size:
                M[hit, c:] ^= self.mul(M[hit, c][:, None], M[r, c:][None, :])
            pivots.append((r, c))
            r += 1
        return pivots

    def rank(self, M) -> int:
        M = np.array(M, dtype=np.int64, copy=True, ndmin=2)
        if M.size == 0:
            return 0
        return len(self._eliminate(M, full=False))

    def solve(self, M, v) -> np.ndarray:
        """Unique solution ``y`` of ``M @ y == v`` for square, invertible ``M``.

        ``v`` may carry several right-hand sides as columns.
        """
        M = np.asarray(M, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        vec = v.ndim == 1
        if vec:
            v = v[:, None]
        n = M.shape[0]
        if M.ndim != 2 or M.shape[1] != n:
            raise DimensionError(f"solve needs a square matrix, got {M.shape}")
        if v.shape[0] != n:
            raise DimensionError(f"right-hand side has {v.shape[0]} rows, expected {n}")
        aug = np.concatenate([M, v], axis=1)
        pivots = self._eliminate(aug, ncols=n)
        if len(pivots) < n:
            raise SingularMatrixError(f"matrix is singular (rank {len(pivots)} < {n})")
        y = aug[:, n:]
        return y[:, 0] if vec else y

    def row_basis(self, M, limit: int | None = None) -> list[int]:
        """Indices of the first linearly independent rows of ``M``, scanned in order."""
        M = np.asarray(M, dtype=np.int64)
        basis: list[np.ndarray] = []
        lead: list[int] = []
        chosen: list[int] = []
        for idx, row in enumerate(M):
            row = row.copy()
            for b, c in zip(basis, lead):
                if row[c]:
                    row ^= self.mul(row[c], b)
            nz = np.flatnonzero(row)
            if nz.size == 0:
                continue
            c = int(nz[0])
            row = self.mul(row, self.inv(int(row[c])))
            for i, b in enumerate(basis):
                if b[c]:
                    basis[i] = b ^ self.mul(b[c], row)
            basis.append(row)
            lead.append(c)
            chosen.append(idx)
            if limit is not None and len(chosen) == limit:
                break
        return chosen

    def vandermonde(self, points, ncols: int) -> np.ndarray:
        """Rows ``[1, a, a^2, ..., a^(ncols-1)]`` for each evaluation point ``a``."""
        points = self.check(points)
        if len(np.unique(points)) != points.size:
            raise FieldError("evaluation points must be distinct")
        V = np.zeros((points.size, ncols), dtype=np.int64)
        if ncols:
            V[:, 0] = 1
        for c in range(1, ncols):
            V[:, c] = self.mul(V[:, c - 1], points)
        return V


@lru_cache(maxsize=None)
def _tables(w: int, poly: int):
    order = 1 << w
    for g in range(2, order):
        # exp has a zero tail: log(0) points past every nonzero log sum, so
        # mul needs no branch for zero operands
        exp = np.zeros(4 * order + 1, dtype=np.int64)
        log = np.zeros(order, dtype=np.int64)
        x = 1
        ok = True
        for i in range(order - 1):
            if x == 0:
                raise FieldError(f"polynomial {poly:#x} is not irreducible over GF(2)")
            if i and x == 1:
                ok = False
                break
            exp[i] = x
            log[x] = i
            x = clmul_mod(x, g, poly, w)
        if ok and x == 1:
            exp[order - 1 : 2 * (order - 1)] = exp[: order - 1]
            log[0] = 2 * order
            exp.setflags(write=False)
            log.setflags(write=False)
            return g, exp, log
    raise FieldError(f"polynomial {poly:#x} is not irreducible over GF(2)")


@lru_cache(maxsize=None)
def field(w: int = DEFAULT_W, poly: int | None = None) -> GF2w:
    return GF2w(w, poly)


def field_mul(a: int, b: int, w: int = DEFAULT_W) -> int:
    return field(w).mul(a, b)


def mat_mul(A, B, w: int = DEFAULT_W) -> np.ndarray:
    return field(w).matmul(A, B)


def mat_rank(M, w: int = DEFAULT_W) -> int:
    return field(w).rank(M)


def mat_solve(M, v, w: int = DEFAULT_W) -> np.ndarray:
    return field(w).solve(M, v)
