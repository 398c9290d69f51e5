"""Meshes, tau-leap path sampling and exact push-forward of distributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import TauLeapKernel
from .pmf import SparsePmf, aggregate_rows


@dataclass(frozen=True)
class Mesh:
    points: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if not pts or pts[0] != 0.0:
            raise ValueError("mesh must start at 0")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("mesh points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, T: float, tau: float) -> "Mesh":
        """Steps of size ``tau``; the final step is shortened to land on ``T``."""
        if T < 0 or tau <= 0:
            raise ValueError("need T >= 0 and tau > 0")
        n = int(round(T / tau))
        if n == 0 or abs(n * tau - T) > 1e-12 * max(1.0, T):
            n = int(np.floor(T / tau + 1e-12))
            pts = [i * tau for i in range(n + 1)]
            if T - pts[-1] > 1e-12 * max(1.0, T):
                pts.append(T)
            return cls(tuple(pts))
        return cls(tuple(np.linspace(0.0, T, n + 1)))

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def max_step(self) -> float:
        return float(self.steps.max()) if len(self.points) > 1 else 0.0

    @property
    def T(self) -> float:
        return self.points[-1]


@dataclass
class TauLeapPath:
    times: np.ndarray
    states: np.ndarray

    def state_at(self, t: float) -> np.ndarray:
        """Piecewise-constant value, constant on ``[t_{i-1}, t_i)``."""
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[max(k, 0)]


def simulate_mesh(kernel: TauLeapKernel, x0, mesh: Mesh, rng: np.random.Generator | int | None = None) -> TauLeapPath:
    rng = np.random.default_rng(rng)
    states = [np.asarray(x0, dtype=np.int64)]
    for tau in mesh.steps:
        states.append(kernel.step(states[-1], float(tau), rng))
    return TauLeapPath(np.asarray(mesh.points), np.array(states))


def tauleap_endpoints(kernel: TauLeapKernel, x0, mesh: Mesh, n: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty((n, kernel.net.n_species), dtype=np.int64)
    steps = [float(t) for t in mesh.steps]
    for s in range(n):
        x = np.asarray(x0, dtype=np.int64)
        for tau in steps:
            x = kernel.step(x, tau, rng)
        out[s] = x
    return out


def state_transition_pmf(kernel: TauLeapKernel, x, tau: float, mass_tolerance: float = 1e-12,
                         size_cap: int = 10**7) -> tuple[SparsePmf, float]:
    """``phi(tau, x, .)`` over the enumerated count box and the mass it captures."""
    if not 0 < mass_tolerance < 1:
        raise ValueError("mass_tolerance must lie in (0, 1)")
    return kernel.transition_pmf(x, tau, mass_tolerance, size_cap)


@dataclass
class PushForwardResult:
    pmf: SparsePmf
    mass_loss: float


def push_forward_step(kernel: TauLeapKernel, p: SparsePmf, tau: float, mass_tolerance: float = 1e-12,
                      size_cap: int = 10**7, prune_mass: float = 0.0) -> PushForwardResult:
    """One application of the transition matrix to ``p`` (signed measures allowed).

    With ``prune_mass > 0`` the lightest resulting states, of total weight at
    most ``prune_mass``, are dropped and counted as loss.
    """
    states, weights = p.to_arrays(kernel.net.n_species)
    parts_s, parts_w = [], []
    loss = 0.0
    for x, w in zip(states, weights):
        if w == 0.0:
            continue
        tgt, prob, captured = kernel.transition_arrays(x, tau, mass_tolerance, size_cap)
        parts_s.append(tgt)
        parts_w.append(w * prob)
        loss += abs(w) * (1.0 - captured)
    if not parts_s:
        return PushForwardResult(SparsePmf({}, signed=p.signed), 0.0)
    s, w = aggregate_rows(np.concatenate(parts_s), np.concatenate(parts_w))
    if not p.signed:
        w = np.maximum(w, 0.0)
    if prune_mass > 0:
        s, w, dropped = prune_smallest(s, w, prune_mass)
        loss += dropped
    return PushForwardResult(SparsePmf.from_arrays(s, w, signed=p.signed, aggregate=False), loss)


def prune_smallest(states: np.ndarray, weights: np.ndarray, budget: float):
    """Drop the smallest-magnitude entries whose total magnitude stays within ``budget``."""
    mag = np.abs(weights)
    order = np.argsort(mag, kind="stable")
    csum = np.cumsum(mag[order])
    n_drop = int(np.searchsorted(csum, budget, side="right"))
    if n_drop == 0:
        return states, weights, 0.0
    keep = np.sort(order[n_drop:])
    return states[keep], weights[keep], float(csum[n_drop - 1])


def push_forward(kernel: TauLeapKernel, p: SparsePmf, mesh: Mesh, mass_tolerance: float = 1e-12,
                 size_cap: int = 10**7, support_cap: int = 10**6, prune: bool = True) -> PushForwardResult:
    """``p_hat(T) = phi(tau_n) ... phi(tau_1) p`` by repeated one-step transitions.

    Every step enumerates counts up to ``mass_tolerance`` of tail mass and, if
    ``prune``, drops at most another ``mass_tolerance`` of the lightest states.
    ``mass_loss`` accumulates both; ``support_cap`` bounds the number of
    states carried between steps.
    """
    cur = p
    loss = 0.0
    for tau in mesh.steps:
        res = push_forward_step(kernel, cur, float(tau), mass_tolerance, size_cap,
                                prune_mass=mass_tolerance if prune else 0.0)
        cur = res.pmf
        loss += res.mass_loss
        if len(cur) > support_cap:
            raise RuntimeError(f"push-forward support {len(cur)} exceeds cap {support_cap}")
    return PushForwardResult(cur, loss)


def _tauleap_chunk(args):
    kernel, x0, points, n, seed, index = args
    from .rng import chunk_generator

    return tauleap_endpoints(kernel, x0, Mesh(points), n, chunk_generator(seed, index))


def tauleap_ensemble(kernel: TauLeapKernel, x0, mesh: Mesh, n: int, seed: int, workers: int = 1,
                     chunk: int = 1000) -> np.ndarray:
    """``n`` endpoint samples seeded per chunk, so the result does not depend on ``workers``."""
    from concurrent.futures import ProcessPoolExecutor

    from .rng import chunk_sizes

    jobs = [(kernel, tuple(int(v) for v in x0), mesh.points, m, seed, i)
            for i, m in enumerate(chunk_sizes(n, chunk))]
    if not jobs:
        return np.zeros((0, kernel.net.n_species), dtype=np.int64)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_tauleap_chunk, jobs))
    else:
        parts = [_tauleap_chunk(job) for job in jobs]
    return np.concatenate(parts, axis=0)
