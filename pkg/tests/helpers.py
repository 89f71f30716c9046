"""Shared parameter grids for the test modules."""

import math
from fractions import Fraction

from coded_tradeoff.codec import SchemeParams, padded_m


def divisible_grid(max_K=12, max_m=120, max_N=60):
    """(K, q, mu, m, N) tuples where every batch and segment divides evenly."""
    out = []
    for K in range(2, max_K + 1):
        mus = sorted({Fraction(a, K) for a in range(1, K + 1)})
        for mu in mus:
            for q in range(math.ceil(1 / mu), K + 1):
                r = math.floor(mu * q)
                m = padded_m(K, q, mu, 1)
                N = q * math.lcm(*range(1, r + 1))
                if m <= max_m and N <= max_N:
                    out.append((K, q, mu, m, N))
    return out


def params(K, q, mu, m, N, n=2, w=16):
    return SchemeParams(K=K, q=q, mu=Fraction(mu), m=m, n=n, N=N, w=w)
