"""Distances between distributions, order fitting and consistency checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import stats

from .kernels import TauLeapKernel
from .network import ReactionNetwork
from .pmf import NormSpec, SparsePmf


def moment_variation(g: SparsePmf, r: float, norm: NormSpec = NormSpec()) -> float:
    """``sum_x (1 + |x|**r) |g(x)| / 2``; at ``r = 0`` this is the 1-norm of ``g``."""
    states, w = g.to_arrays()
    if len(w) == 0:
        return 0.0
    return float(0.5 * np.sum((1.0 + norm.power(states, r)) * np.abs(w)))


def tv_distance(p1: SparsePmf, p2: SparsePmf) -> float:
    """``sum_x |p1(x) - p2(x)|`` (not halved)."""
    return moment_variation(p1 - p2, 0)


def moment_error(p1: SparsePmf, p2: SparsePmf, r: float, norm: NormSpec = NormSpec()) -> float:
    """``|E_p1 |x|**r - E_p2 |x|**r|``."""
    def moment(p):
        s, w = p.to_arrays()
        return float(np.sum(norm.power(s, r) * w)) if len(w) else 0.0

    return abs(moment(p1) - moment(p2))


def norm_comparison_constant(r1: float, r2: float, norm: NormSpec = NormSpec(), n_species: int = 1,
                             sample_box: int = 10, rng=None, n_checks: int = 100) -> float:
    """Smallest ``alpha`` with ``|g|_r1 <= alpha |g|_r2`` for every measure ``g``.

    This is the maximum of ``(1 + |x|**r1) / (1 + |x|**r2)`` over the lattice.
    The ratio is at most 1 once ``|x| >= 1``, so only the finite set with
    ``|x| < 1`` matters; the searched box is widened to contain it.  The
    constant is then checked on ``n_checks`` random signed measures.
    """
    if not 0 < r1 < r2:
        raise ValueError("need 0 < r1 < r2")
    if norm.kind == "weighted":
        reach = int(math.ceil(1.0 / min(norm.weights)))
    else:
        reach = 1
    half = max(int(sample_box), reach)
    axis = np.arange(-half, half + 1)
    states = np.array(list(product(axis, repeat=n_species)), dtype=np.int64)
    ratio = (1.0 + norm.power(states, r1)) / (1.0 + norm.power(states, r2))
    alpha = max(1.0, float(ratio.max()))
    rng = np.random.default_rng(rng)
    for _ in range(n_checks):
        size = int(rng.integers(1, 20))
        idx = rng.choice(len(states), size=size, replace=False)
        g = SparsePmf.from_arrays(states[idx], rng.normal(size=size), signed=True)
        lhs, rhs = moment_variation(g, r1, norm), alpha * moment_variation(g, r2, norm)
        if lhs > rhs * (1 + 1e-12):
            raise AssertionError(f"norm comparison failed: {lhs} > {rhs}")
    return alpha


# --- order fitting ---------------------------------------------------------------

@dataclass
class OrderFit:
    order: float
    stderr: float
    intercept: float


def fit_order(taus, errors) -> OrderFit:
    """Least-squares slope of ``log error`` against ``log tau``.

    A non-positive error means an exact match; the fit then reports
    ``order = inf``.
    """
    taus = np.asarray(taus, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(taus) != len(errors) or len(taus) < 3:
        raise ValueError("need at least three (tau, error) pairs")
    if np.any(np.diff(taus) >= 0):
        raise ValueError("taus must be strictly decreasing")
    if np.any(errors <= 0):
        return OrderFit(math.inf, 0.0, math.nan)
    res = stats.linregress(np.log(taus), np.log(errors))
    return OrderFit(float(res.slope), float(res.stderr), float(res.intercept))


# --- pointwise consistency --------------------------------------------------------

@dataclass
class ConsistencyReport:
    x: tuple[int, ...]
    q: int
    tolerance: float
    residuals: dict[tuple[int, tuple[int, ...]], float] = field(default_factory=dict)
    max_residual: float = 0.0
    threshold: float = 0.0
    passed: bool = True

    def to_dict(self) -> dict:
        worst = sorted(self.residuals.items(), key=lambda kv: -kv[1])[:10]
        return {
            "x": list(self.x),
            "q": self.q,
            "tolerance": self.tolerance,
            "max_residual": self.max_residual,
            "threshold": self.threshold,
            "verdict": "pass" if self.passed else "fail",
            "worst": [{"order": i, "k": list(k), "residual": r} for (i, k), r in worst],
        }


def count_generator_powers(net: ReactionNetwork, x, q: int) -> list[dict[tuple[int, ...], float]]:
    """Rows ``Qc^i(x; 0, .)`` for ``i = 0..q`` of the reaction-count generator.

    ``Qc(x; k', k' + e_j) = a_j(x + nu k')`` and ``Qc(x; k', k') = -a_0(x + nu k')``.
    Starting from ``k = 0`` the ``i``-th power is supported on ``|k|_1 <= i``.
    """
    x = np.asarray(x, dtype=np.int64)
    m = net.n_reactions
    rows = [{(0,) * m: 1.0}]
    cache: dict[tuple[int, ...], np.ndarray] = {}
    for _ in range(q):
        nxt: dict[tuple[int, ...], float] = {}
        for k, v in sorted(rows[-1].items()):
            if k not in cache:
                cache[k] = net.propensities(x + net.nu @ np.asarray(k, dtype=np.int64))
            a = cache[k]
            nxt[k] = nxt.get(k, 0.0) - v * float(a.sum())
            for j in range(m):
                if a[j] != 0.0:
                    kj = list(k)
                    kj[j] += 1
                    kj = tuple(kj)
                    nxt[kj] = nxt.get(kj, 0.0) + v * float(a[j])
        rows.append(nxt)
    return rows


def count_vectors(m: int, max_total: int):
    """All ``k`` in ``Z_+^m`` with ``|k|_1 <= max_total``, in lexicographic order."""
    for k in product(range(max_total + 1), repeat=m):
        if sum(k) <= max_total:
            yield k


def consistency_check(kernel: TauLeapKernel, x, q: int = 1, tolerance: float = 1e-12) -> ConsistencyReport:
    """Compare the kernel's step-size derivatives at zero with the exact count process.

    For ``i = 1..q`` and every ``k`` with ``|k|_1 <= q`` (outside that set both
    sides vanish for Poisson/binomial counts) the residual is
    ``|d^i/dtau^i phi~(0, x; k) - Qc^i(x; 0, k)|``.  The check passes when the
    largest residual is at most ``tolerance * (1 + a_0(x)**q)``.
    """
    net = kernel.net
    x = tuple(int(v) for v in x)
    powers = count_generator_powers(net, x, q)
    a0 = float(net.propensities(x).sum())
    report = ConsistencyReport(x=x, q=q, tolerance=tolerance, threshold=tolerance * (1.0 + a0**q))
    for i in range(1, q + 1):
        for k in count_vectors(net.n_reactions, q):
            exact = powers[i].get(k, 0.0)
            method = kernel.count_pmf_derivative(x, i, k)
            report.residuals[(i, k)] = abs(method - exact)
    report.max_residual = max(report.residuals.values(), default=0.0)
    report.passed = report.max_residual <= report.threshold
    return report


def finite_difference_derivative(kernel: TauLeapKernel, x, k, h: float = 1e-3, levels: int = 3) -> float:
    """First step-size derivative of ``count_pmf`` at zero by Richardson-extrapolated differences.

    Uses forward quotients at ``h, h/2, h/4, ...`` (the pmf is undefined for
    negative steps) and eliminates the ``h, h^2, ...`` error terms.
    """
    f0 = kernel.count_pmf(x, 0.0, k)
    table = [(kernel.count_pmf(x, h / 2**n, k) - f0) / (h / 2**n) for n in range(levels)]
    for level in range(1, levels):
        factor = 2.0**level
        table = [(factor * table[n + 1] - table[n]) / (factor - 1.0) for n in range(len(table) - 1)]
    return table[0]
