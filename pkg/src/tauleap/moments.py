"""Raw moments of Poisson and binomial counts by their one-step recursions.

    Poisson:   E(K^r)   = lam * E((K + 1)^(r-1))
    binomial:  E(K_n^r) = n p * E((1 + K_{n-1})^(r-1))

Expanding the inner power binomially turns both into recursions on lower
moments.  All terms are non-negative, so the results are accurate to a few
ulps.
"""

from __future__ import annotations

from math import comb


def poisson_moments(lam: float, r_max: int) -> list[float]:
    """``[E K^0, ..., E K^r_max]`` for ``K ~ Poisson(lam)``."""
    if lam < 0:
        raise ValueError("Poisson mean must be non-negative")
    m = [1.0]
    for r in range(1, r_max + 1):
        m.append(lam * sum(comb(r - 1, i) * m[i] for i in range(r)))
    return m


def poisson_moment(lam: float, r: int) -> float:
    if r < 0:
        raise ValueError("moment order must be non-negative")
    return poisson_moments(lam, r)[r]


def binomial_moments(n: int, p: float, r_max: int) -> list[float]:
    """``[E K^0, ..., E K^r_max]`` for ``K ~ Binomial(n, p)``."""
    if n < 0 or not 0.0 <= p <= 1.0:
        raise ValueError("need n >= 0 and p in [0, 1]")
    # row[i] holds E(K_m^i); K_0 == 0
    row = [1.0] + [0.0] * r_max
    for m in range(1, n + 1):
        row = [1.0] + [m * p * sum(comb(r - 1, i) * row[i] for i in range(r)) for r in range(1, r_max + 1)]
    return row


def binomial_moment(n: int, p: float, r: int) -> float:
    if r < 0:
        raise ValueError("moment order must be non-negative")
    return binomial_moments(n, p, r)[r]


def sum_moments(moment_lists: list[list[float]], r_max: int) -> list[float]:
    """Raw moments of a sum of independent variables from their own raw moments."""
    out = [1.0] + [0.0] * r_max
    for ms in moment_lists:
        out = [sum(comb(r, i) * out[i] * ms[r - i] for i in range(r + 1)) for r in range(r_max + 1)]
    return out
