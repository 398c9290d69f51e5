"""Finite-support (signed) measures on Z^N and norms on R^N."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np


@dataclass(frozen=True)
class NormSpec:
    """A norm on R^N: ``"one"``, ``"inf"`` or ``"weighted"`` (sum of ``w_i |x_i|``)."""

    kind: str = "one"
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("one", "inf", "weighted"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind == "weighted":
            if not self.weights or any(not w > 0 for w in self.weights):
                raise ValueError("weighted norm needs strictly positive weights")
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @classmethod
    def weighted(cls, weights: Iterable[float]) -> "NormSpec":
        return cls("weighted", tuple(weights))

    @classmethod
    def from_dict(cls, d: Mapping | str | None) -> "NormSpec":
        if d is None:
            return cls()
        if isinstance(d, str):
            return cls(d)
        return cls(d.get("kind", "one"), tuple(d["weights"]) if d.get("weights") else None)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.weights:
            out["weights"] = list(self.weights)
        return out

    def __call__(self, states) -> np.ndarray | float:
        """Norm of a single vector, or of every row of a 2-d array."""
        a = np.abs(np.asarray(states, dtype=float))
        if self.kind == "one":
            out = a.sum(axis=-1)
        elif self.kind == "inf":
            out = a.max(axis=-1, initial=0.0)
        else:
            w = np.asarray(self.weights)
            if w.shape[0] != a.shape[-1]:
                raise ValueError(f"norm has {w.shape[0]} weights, state has {a.shape[-1]} coordinates")
            out = a @ w
        return float(out) if np.ndim(out) == 0 else out

    def power(self, states, r: float) -> np.ndarray:
        """``|x|**r`` row-wise with the convention ``0**0 == 1``."""
        n = np.atleast_1d(self(np.atleast_2d(states)))
        if r == 0:
            return np.ones_like(n)
        return n ** r


ONE_NORM = NormSpec("one")


class SparsePmf:
    """Finite-support measure on Z^N stored as ``{state tuple: weight}``.

    ``signed=False`` marks a (sub-)probability measure; weights are then
    checked to be non-negative.  Differences and derivative vectors are
    signed.
    """

    __slots__ = ("entries", "signed")

    def __init__(self, entries: Mapping[tuple[int, ...], float] | None = None, signed: bool = False):
        self.entries = {tuple(int(v) for v in k): float(w) for k, w in (entries or {}).items()}
        self.signed = bool(signed)
        if not self.signed:
            neg = [w for w in self.entries.values() if w < 0]
            if neg:
                raise ValueError(f"unsigned pmf has negative weight {min(neg)}")

    @classmethod
    def delta(cls, x) -> "SparsePmf":
        return cls({tuple(int(v) for v in x): 1.0})

    @classmethod
    def from_arrays(cls, states, weights, signed: bool = False, aggregate: bool = True) -> "SparsePmf":
        """Build from parallel arrays; duplicate states are summed when ``aggregate``."""
        states = np.asarray(states, dtype=np.int64)
        weights = np.asarray(weights, dtype=float)
        if states.size == 0:
            return cls({}, signed=signed)
        if aggregate:
            states, weights = aggregate_rows(states, weights)
        pmf = cls.__new__(cls)
        pmf.entries = dict(zip(map(tuple, states.tolist()), weights.tolist()))
        pmf.signed = bool(signed)
        if not signed and np.any(weights < 0):
            raise ValueError("unsigned pmf has negative weight")
        return pmf

    def to_arrays(self, n_species: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """States (sorted lexicographically) and weights as numpy arrays."""
        if not self.entries:
            dim = n_species if n_species is not None else 0
            return np.zeros((0, dim), dtype=np.int64), np.zeros(0)
        keys = sorted(self.entries)
        return np.array(keys, dtype=np.int64), np.array([self.entries[k] for k in keys])

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, x) -> float:
        return self.entries.get(tuple(int(v) for v in x), 0.0)

    def items(self):
        return self.entries.items()

    def total(self) -> float:
        return float(sum(self.entries[k] for k in sorted(self.entries)))

    def support(self) -> list[tuple[int, ...]]:
        return sorted(k for k, w in self.entries.items() if w != 0)

    def _combine(self, other: "SparsePmf", sign: float) -> "SparsePmf":
        out = dict(self.entries)
        for k, w in other.entries.items():
            out[k] = out.get(k, 0.0) + sign * w
        return SparsePmf(out, signed=True)

    def __add__(self, other: "SparsePmf") -> "SparsePmf":
        res = self._combine(other, 1.0)
        res.signed = self.signed or other.signed
        return res

    def __sub__(self, other: "SparsePmf") -> "SparsePmf":
        return self._combine(other, -1.0)

    def __mul__(self, c: float) -> "SparsePmf":
        return SparsePmf({k: c * w for k, w in self.entries.items()}, signed=self.signed or c < 0)

    __rmul__ = __mul__

    def __neg__(self) -> "SparsePmf":
        return self * -1.0

    def __repr__(self):
        kind = "signed" if self.signed else "pmf"
        return f"SparsePmf<{kind}, {len(self.entries)} states, total={self.total():.6g}>"


def aggregate_rows(states: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum weights of identical rows; rows come back in lexicographic order.

    Rows are encoded as mixed-radix integer keys; the summation order is fixed
    by the input order, so results are reproducible bit for bit.
    """
    states = np.asarray(states, dtype=np.int64)
    if states.shape[0] == 0:
        return states, np.asarray(weights, dtype=float)
    lo = states.min(axis=0)
    span = states.max(axis=0) - lo + 1
    if float(np.prod(span.astype(float))) >= 2.0**62:
        uniq, inverse = np.unique(states, axis=0, return_inverse=True)
        return uniq, np.bincount(inverse.reshape(-1), weights=weights, minlength=uniq.shape[0])
    strides = np.ones(len(span), dtype=np.int64)
    for i in range(len(span) - 2, -1, -1):
        strides[i] = strides[i + 1] * span[i + 1]
    keys = (states - lo) @ strides
    ukeys, inverse = np.unique(keys, return_inverse=True)
    summed = np.bincount(inverse, weights=weights, minlength=ukeys.shape[0])
    uniq = np.empty((ukeys.shape[0], states.shape[1]), dtype=np.int64)
    rem = ukeys.copy()
    for i in range(len(span)):
        uniq[:, i], rem = np.divmod(rem, strides[i])
    return uniq + lo, summed
