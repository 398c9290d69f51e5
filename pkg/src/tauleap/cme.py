"""Truncated chemical master equation solved by uniformization.

The forward equation is restricted to a box of states.  Transitions that
would leave the box are kept on the diagonal but have no target, so their
mass drains into an implicit sink; together with the dropped Poisson tail of
the uniformization series this defines ``truncation_loss``.  Because every
term of the series is non-negative, ``truncation_loss`` is also a rigorous
bound on the total-variation distance to the untruncated solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from .network import ReactionNetwork
from .pmf import NormSpec, SparsePmf

# Poisson(Lambda*dt) weights underflow near exp(-745); keep each chunk well inside.
_MAX_CHUNK_RATE = 400.0


class TruncationError(RuntimeError):
    """Mass lost from the box exceeds the allowed tolerance."""

    def __init__(self, loss: float, tolerance: float):
        super().__init__(f"truncation loss {loss:.3e} exceeds tolerance {tolerance:.3e}; enlarge the box")
        self.loss = loss
        self.tolerance = tolerance


@dataclass(frozen=True)
class TruncationSpec:
    lower: tuple[int, ...]
    upper: tuple[int, ...]
    mass_tolerance: float = 1e-8

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("box bounds differ in length")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("box lower bound exceeds upper bound")
        if not 0 < self.mass_tolerance < 1:
            raise ValueError("mass_tolerance must lie in (0, 1)")

    @classmethod
    def box(cls, upper, lower=None, mass_tolerance: float = 1e-8) -> "TruncationSpec":
        upper = tuple(int(u) for u in upper)
        lower = tuple(int(v) for v in lower) if lower is not None else (0,) * len(upper)
        return cls(lower, upper, mass_tolerance)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(hi - lo + 1 for lo, hi in zip(self.lower, self.upper))

    def states(self) -> np.ndarray:
        """All box states in C order (last species fastest)."""
        axes = [np.arange(lo, hi + 1) for lo, hi in zip(self.lower, self.upper)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.reshape(-1) for g in grid], axis=1).astype(np.int64)

    def index_of(self, states: np.ndarray) -> np.ndarray:
        """Flat box index per row, -1 for rows outside the box."""
        states = np.asarray(states, dtype=np.int64)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        inside = np.all((states >= lo) & (states <= hi), axis=1)
        idx = np.ravel_multi_index(tuple((np.clip(states, lo, hi) - lo).T), self.shape)
        return np.where(inside, idx, -1)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "mass_tolerance": self.mass_tolerance}


@dataclass
class CmeSolution:
    pmf: SparsePmf
    truncation_loss: float
    t: float
    uniformization_rate: float
    series_terms: int


def truncated_generator(net: ReactionNetwork, trunc: TruncationSpec):
    """Sparse ``Q_trunc`` (rows = source state) and the box state list."""
    states = trunc.states()
    n = states.shape[0]
    rates = net.propensities_many(states)
    rows, cols, vals = [], [], []
    for j in range(net.n_reactions):
        target = trunc.index_of(states + net.nu[:, j])
        keep = (target >= 0) & (rates[:, j] > 0)
        rows.append(np.nonzero(keep)[0])
        cols.append(target[keep])
        vals.append(rates[keep, j])
    a0 = rates.sum(axis=1)
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(-a0)
    q = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return q, states, a0


def cme_solve(net: ReactionNetwork, p0: SparsePmf, t: float, trunc: TruncationSpec,
              check: bool = True) -> CmeSolution:
    """``p(t) = p0 exp(Q t)`` on the truncated box.

    The series is cut once the Poisson tail of each chunk drops below
    ``mass_tolerance / 2`` spread over the chunks.  With ``check`` a loss
    above ``trunc.mass_tolerance`` raises :class:`TruncationError`.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if p0.signed:
        raise ValueError("cme_solve needs a probability vector")
    p0_states, p0_w = p0.to_arrays(net.n_species)
    idx = trunc.index_of(p0_states) if len(p0_w) else np.zeros(0, dtype=int)
    if np.any(idx < 0):
        raise ValueError("initial distribution has support outside the truncation box")
    q, states, a0 = truncated_generator(net, trunc)
    v = np.zeros(states.shape[0])
    np.add.at(v, idx, p0_w)
    mass0 = float(p0_w.sum())

    lam = float(a0.max(initial=0.0))
    if not math.isfinite(lam):
        raise OverflowError("uniformization rate is not finite")
    terms = 0
    if t > 0 and lam > 0:
        n_chunks = max(1, math.ceil(lam * t / _MAX_CHUNK_RATE))
        dt = t / n_chunks
        tail_budget = trunc.mass_tolerance / (2 * n_chunks)
        # P = I + Q / lam, applied from the right: v <- v P
        pt = (sp.identity(q.shape[0], format="csr") + q / lam).T.tocsr()
        mu = lam * dt
        n_max = int(poisson.isf(tail_budget, mu)) + 1
        weights = poisson.pmf(np.arange(n_max + 1), mu)
        for _ in range(n_chunks):
            acc = weights[0] * v
            term = v
            for n in range(1, n_max + 1):
                term = pt @ term
                acc += weights[n] * term
            v = acc
            terms += n_max
    keep = v > 0
    pmf = SparsePmf.from_arrays(states[keep], v[keep], aggregate=False)
    loss = max(0.0, mass0 - float(np.sum(v)))
    if check and loss > trunc.mass_tolerance:
        raise TruncationError(loss, trunc.mass_tolerance)
    return CmeSolution(pmf, loss, t, lam, terms)


def cme_moment(pmf: SparsePmf, r: float, norm: NormSpec = NormSpec()) -> float:
    """``sum_x (1 + |x|**r) pmf(x)`` (with ``0**0 == 1``)."""
    states, w = pmf.to_arrays()
    if len(w) == 0:
        return 0.0
    return float(np.sum((1.0 + norm.power(states, r)) * w))
