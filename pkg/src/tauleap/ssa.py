"""Gillespie's direct method and reproducible ensembles."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .network import ReactionNetwork
from .rng import chunk_generator, chunk_sizes

DEFAULT_JUMP_CAP = 10**8


class ExplosionError(RuntimeError):
    """Jump count exceeded the cap; the process is suspected to explode."""


@dataclass
class SsaPath:
    jump_times: np.ndarray      # increasing, in (0, T]
    states: np.ndarray          # states[0] = x0, states[k] holds on [jump_times[k-1], jump_times[k])
    reaction_counts: np.ndarray  # firings per channel over [0, T]
    T: float

    def state_at(self, t: float) -> np.ndarray:
        """Right-continuous evaluation ``X(t)``."""
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        return self.states[k]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def ssa_simulate(net: ReactionNetwork, x0, T: float, rng: np.random.Generator | int | None = None,
                 jump_cap: int = DEFAULT_JUMP_CAP) -> SsaPath:
    """One exact path on ``[0, T]``; stops early in an absorbing state."""
    if T < 0:
        raise ValueError("T must be non-negative")
    rng = np.random.default_rng(rng)
    x = np.array(x0, dtype=np.int64)
    times, states = [], [x.copy()]
    counts = np.zeros(net.n_reactions, dtype=np.int64)
    t = 0.0
    while True:
        a = net.propensities(x)
        a0 = a.sum()
        if not a0 > 0:
            break
        t += rng.exponential(1.0 / a0)
        if t > T:
            break
        if len(times) >= jump_cap:
            raise ExplosionError(f"more than {jump_cap} jumps before T={T}")
        j = _pick(a, a0, rng.random())
        x = x + net.nu[:, j]
        counts[j] += 1
        times.append(t)
        states.append(x.copy())
    return SsaPath(np.array(times), np.array(states), counts, T)


def _pick(a: np.ndarray, a0: float, u: float) -> int:
    j = int(np.searchsorted(np.cumsum(a), u * a0, side="right"))
    return min(j, len(a) - 1)


def ssa_endpoints(net: ReactionNetwork, x0, T: float, n: int, rng: np.random.Generator,
                  jump_cap: int = DEFAULT_JUMP_CAP) -> np.ndarray:
    """Final states of ``n`` independent paths, shape ``(n, N)``."""
    nu_cols = [net.nu[:, j].copy() for j in range(net.n_reactions)]
    specs = net.propensity_specs
    out = np.empty((n, net.n_species), dtype=np.int64)
    x0 = np.asarray(x0, dtype=np.int64)
    for s in range(n):
        x = x0.copy()
        t = 0.0
        jumps = 0
        while True:
            xr = x[None, :]
            a = np.array([spec.evaluate_many(xr)[0] for spec in specs])
            a0 = a.sum()
            if not a0 > 0:
                break
            t += rng.exponential(1.0 / a0)
            if t > T:
                break
            jumps += 1
            if jumps > jump_cap:
                raise ExplosionError(f"more than {jump_cap} jumps before T={T}")
            x = x + nu_cols[_pick(a, a0, rng.random())]
        out[s] = x
    return out


def _ensemble_chunk(args):
    net, x0, T, n, seed, index, jump_cap = args
    return ssa_endpoints(net, x0, T, n, chunk_generator(seed, index), jump_cap)


def ssa_ensemble(net: ReactionNetwork, x0, T: float, n: int, seed: int, workers: int = 1,
                 chunk: int = 1000, jump_cap: int = DEFAULT_JUMP_CAP) -> np.ndarray:
    """``n`` endpoint samples; identical for any ``workers`` given the same seed and chunk."""
    sizes = chunk_sizes(n, chunk)
    jobs = [(net, tuple(int(v) for v in x0), T, m, seed, i, jump_cap) for i, m in enumerate(sizes)]
    if not jobs:
        return np.zeros((0, net.n_species), dtype=np.int64)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_ensemble_chunk, jobs))
    else:
        parts = [_ensemble_chunk(job) for job in jobs]
    return np.concatenate(parts, axis=0)


def empirical_pmf(samples: np.ndarray):
    from .pmf import SparsePmf

    samples = np.asarray(samples, dtype=np.int64)
    if samples.shape[0] == 0:
        return SparsePmf({})
    return SparsePmf.from_arrays(samples, np.full(samples.shape[0], 1.0 / samples.shape[0]))


def moment_summary(samples: np.ndarray, z: float = 1.959963984540054) -> dict:
    """Per-species mean with normal-approximation confidence intervals."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    if n == 0:
        return {"n": 0, "mean": None, "std": None, "ci_low": None, "ci_high": None}
    mean = samples.mean(axis=0)
    std = samples.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    half = z * std / math.sqrt(n)
    return {
        "n": n,
        "mean": mean.tolist(),
        "std": std.tolist(),
        "ci_low": (mean - half).tolist(),
        "ci_high": (mean + half).tolist(),
    }
