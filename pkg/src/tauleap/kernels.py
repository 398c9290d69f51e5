"""Tau-leap kernels with independent Poisson/binomial reaction counts.

A kernel maps a state ``x`` to one :class:`CountDistribution` per reaction.
Each distribution's parameter (Poisson mean or binomial success probability)
is a :class:`CountParam`, a function of the step size that also exposes its
exact Taylor coefficients at ``tau = 0``.  Derivatives of the count pmf at
zero step are then computed by truncated power-series arithmetic.

States outside the non-negative orthant are frozen: every count is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from .moments import binomial_moment, poisson_moment
from .network import ModelError, ReactionNetwork
from .pmf import SparsePmf, aggregate_rows

KERNEL_NAMES = ("explicit", "midpoint", "remm")


class KernelNotApplicable(ModelError):
    """The network does not have the shape a kernel was designed for."""


# --- truncated power series ---------------------------------------------------

def series_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.convolve(a, b)[: len(a)]


def series_exp(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a, dtype=float)
    out[0] = math.exp(a[0])
    for n in range(1, len(a)):
        k = np.arange(1, n + 1)
        out[n] = np.dot(k * a[1 : n + 1], out[n - k]) / n
    return out


def series_pow(a: np.ndarray, m: int) -> np.ndarray:
    result = np.zeros_like(a, dtype=float)
    result[0] = 1.0
    base = np.array(a, dtype=float)
    while m:
        if m & 1:
            result = series_mul(result, base)
        m >>= 1
        if m:
            base = series_mul(base, base)
    return result


# --- step-size dependent parameters ------------------------------------------

class CountParam:
    """A parameter ``f(tau)`` with ``f(0) = 0``."""

    def value(self, tau: float) -> float:
        raise NotImplementedError

    def taylor(self, order: int) -> np.ndarray:
        """Coefficients ``f^(i)(0) / i!`` for ``i = 0..order``."""
        raise NotImplementedError

    def derivative_at_zero(self, i: int) -> float:
        return math.factorial(i) * float(self.taylor(i)[i])


@dataclass(frozen=True)
class LinearParam(CountParam):
    slope: float

    def value(self, tau):
        return self.slope * tau

    def taylor(self, order):
        c = np.zeros(order + 1)
        if order >= 1:
            c[1] = self.slope
        return c


@dataclass(frozen=True)
class SaturatingParam(CountParam):
    """``slope * (1 - exp(-decay * tau)) / decay`` (``slope * tau`` when ``decay == 0``)."""

    slope: float
    decay: float

    def value(self, tau):
        if self.decay == 0:
            return self.slope * tau
        return self.slope * -math.expm1(-self.decay * tau) / self.decay

    def taylor(self, order):
        c = np.zeros(order + 1)
        for i in range(1, order + 1):
            c[i] = self.slope * (-1) ** (i + 1) * self.decay ** (i - 1) / math.factorial(i)
        return c


@dataclass(frozen=True)
class MidpointParam(CountParam):
    """``a_j(x*) * tau`` with ``x*`` the rounded half-step drift predictor."""

    net: ReactionNetwork = field(repr=False)
    x: tuple[int, ...]
    reaction: int
    scale: float = 1.0
    # nu a(x) / 2, shared by all reactions of one state
    half_drift: tuple[float, ...] | None = field(default=None, repr=False)

    def value(self, tau):
        if self.half_drift is None:
            xs = midpoint_state(self.net, self.x, tau)
        else:
            xs = np.asarray(self.x, dtype=np.int64) + _round_towards_zero_ties(tau * np.asarray(self.half_drift))
        return self.scale * self.net.propensity_specs[self.reaction].evaluate(xs) * tau

    def taylor(self, order):
        # x* == x for all small tau, so the parameter is linear near zero
        c = np.zeros(order + 1)
        if order >= 1:
            c[1] = self.scale * self.net.propensity_specs[self.reaction].evaluate(self.x)
        return c


def midpoint_state(net: ReactionNetwork, x, tau: float) -> np.ndarray:
    """``round(x + tau/2 * nu a(x))`` with ties resolved towards ``x``."""
    x = np.asarray(x, dtype=np.int64)
    return x + _round_towards_zero_ties(0.5 * tau * (net.nu @ net.propensities(x)))


def _round_towards_zero_ties(d: np.ndarray) -> np.ndarray:
    return (np.sign(d) * np.ceil(np.abs(d) - 0.5)).astype(np.int64)


# --- per-reaction count laws --------------------------------------------------

@dataclass(frozen=True)
class CountDistribution:
    """Law of one reaction count: ``poisson``, ``binomial`` or ``zero``."""

    kind: str
    param: CountParam | None = None
    n_trials: int = 0

    def parameter(self, tau: float) -> float:
        if self.kind == "zero":
            return 0.0
        v = self.param.value(tau)
        if self.kind == "binomial":
            if not -1e-12 <= v <= 1 + 1e-12 or not math.isfinite(v):
                raise ValueError(f"binomial probability {v} outside [0, 1]")
            return min(max(v, 0.0), 1.0)
        if v < 0 or not math.isfinite(v):
            raise ValueError(f"Poisson mean {v} is negative or not finite")
        return v

    def is_degenerate(self, tau: float) -> bool:
        return self.kind == "zero" or self.parameter(tau) == 0.0 or (self.kind == "binomial" and self.n_trials == 0)

    def pmf(self, k, tau: float) -> np.ndarray:
        k = np.asarray(k)
        if self.is_degenerate(tau):
            return (k == 0).astype(float)
        v = self.parameter(tau)
        kf = k.astype(float)
        if self.kind == "poisson":
            logp = xlogy(kf, v) - v - gammaln(kf + 1.0)
            return np.where(k >= 0, np.exp(logp), 0.0)
        n = self.n_trials
        inside = (k >= 0) & (k <= n)
        kc = np.clip(kf, 0, n)
        logp = gammaln(n + 1.0) - gammaln(kc + 1.0) - gammaln(n - kc + 1.0) + xlogy(kc, v) + xlog1py(n - kc, -v)
        return np.where(inside, np.exp(logp), 0.0)

    def truncated_pmf(self, tail: float, tau: float) -> np.ndarray:
        """``pmf(0..K)`` where ``K`` is the smallest cut with ``P(count > K) <= tail``."""
        if self.is_degenerate(tau):
            return np.ones(1)
        if self.kind == "poisson":
            lam = self.parameter(tau)
            hi = int(math.ceil(lam + 15.0 * math.sqrt(lam) + 60.0))
        else:
            hi = self.n_trials
        pk = self.pmf(np.arange(hi + 1), tau)
        # survival P(count > k), summed from the far tail for accuracy
        sf = np.cumsum(pk[::-1])[::-1] - pk
        cut = int(np.argmax(sf <= tail)) if np.any(sf <= tail) else hi
        return pk[: cut + 1]

    def quantile_cut(self, tail: float, tau: float) -> int:
        """Smallest ``K`` with ``P(count > K) <= tail``."""
        return len(self.truncated_pmf(tail, tau)) - 1

    def sample(self, rng: np.random.Generator, tau: float) -> int:
        if self.is_degenerate(tau):
            return 0
        if self.kind == "poisson":
            return int(rng.poisson(self.parameter(tau)))
        return int(rng.binomial(self.n_trials, self.parameter(tau)))

    def raw_moment(self, r: int, tau: float) -> float:
        if self.is_degenerate(tau):
            return 1.0 if r == 0 else 0.0
        if self.kind == "poisson":
            return poisson_moment(self.parameter(tau), r)
        return binomial_moment(self.n_trials, self.parameter(tau), r)

    def pmf_taylor(self, k: int, order: int) -> np.ndarray:
        """Taylor coefficients in ``tau`` of ``P(count = k)`` at ``tau = 0``."""
        out = np.zeros(order + 1)
        if self.kind == "zero" or (self.kind == "binomial" and self.n_trials == 0):
            out[0] = 1.0 if k == 0 else 0.0
            return out
        if k < 0 or (self.kind == "binomial" and k > self.n_trials):
            return out
        p = self.param.taylor(order)
        if k > order and p[0] == 0.0:
            return out
        if self.kind == "poisson":
            return series_mul(series_exp(-p), series_pow(p, k)) / math.factorial(k)
        q = -p
        q[0] += 1.0
        return math.comb(self.n_trials, k) * series_mul(series_pow(p, k), series_pow(q, self.n_trials - k))


ZERO = CountDistribution("zero")


# --- kernels ------------------------------------------------------------------

class SupportCapError(RuntimeError):
    """Enumeration of reaction counts would exceed the configured cap."""


@dataclass(frozen=True, eq=False)
class TauLeapKernel:
    """A tau-leap update ``x + nu K`` with independent counts ``K_j``.

    ``laws(x)`` returns the count laws for a state in the non-negative orthant;
    the freeze policy for other states is applied here, not by ``laws``.
    """

    name: str
    net: ReactionNetwork = field(repr=False)
    laws: Callable[[np.ndarray], Sequence[CountDistribution]] = field(repr=False)
    q: int = 1
    max_derivative_order: int = 2
    superlinear_bounded: bool = False
    # (constructor key, overrides) so the kernel can be rebuilt in worker processes
    recipe: tuple | None = field(default=None, repr=False)

    def __reduce__(self):
        if self.recipe is None:
            raise TypeError(f"kernel {self.name!r} was not built by make_kernel and cannot be pickled")
        kind, overrides = self.recipe
        return (make_kernel, (kind, self.net, dict(overrides)))

    def distributions(self, x) -> list[CountDistribution]:
        x = np.asarray(x, dtype=np.int64)
        if np.any(x < 0):
            return [ZERO] * self.net.n_reactions
        return list(self.laws(x))

    def step(self, x, tau: float, rng: np.random.Generator) -> np.ndarray:
        """One leap: ``x + nu K`` with ``K`` drawn from the count laws."""
        if tau < 0:
            raise ValueError("tau must be non-negative")
        x = np.asarray(x, dtype=np.int64)
        if tau == 0:
            return x.copy()
        k = np.array([d.sample(rng, tau) for d in self.distributions(x)], dtype=np.int64)
        return x + self.net.nu @ k

    def count_pmf(self, x, tau: float, k) -> float:
        """Product of the marginal pmfs at count vector ``k``."""
        k = np.asarray(k, dtype=np.int64)
        if np.any(k < 0):
            return 0.0
        return float(np.prod([d.pmf(int(kj), tau) for d, kj in zip(self.distributions(x), k)]))

    def count_pmf_taylor(self, x, k, order: int) -> np.ndarray:
        dists = self.distributions(x)
        out = np.zeros(order + 1)
        out[0] = 1.0
        for d, kj in zip(dists, k):
            out = series_mul(out, d.pmf_taylor(int(kj), order))
        return out

    def count_pmf_derivative(self, x, i: int, k) -> float:
        """``i``-th step-size derivative of ``count_pmf(x, tau, k)`` at ``tau = 0``."""
        if i < 0 or i > self.max_derivative_order:
            raise ValueError(f"kernel {self.name!r} provides derivatives up to order {self.max_derivative_order}")
        k = np.asarray(k, dtype=np.int64)
        if np.any(k < 0):
            return 0.0
        return math.factorial(i) * float(self.count_pmf_taylor(x, k, i)[i])

    def transition_arrays(self, x, tau: float, mass_tolerance: float = 1e-12,
                          size_cap: int = 10**7) -> tuple[np.ndarray, np.ndarray, float]:
        """Target states, probabilities and captured mass of one step from ``x``.

        Each count is cut at its ``1 - mass_tolerance / (2M)`` quantile, so the
        enumerated product box holds at least ``1 - mass_tolerance`` of the mass.
        """
        x = np.asarray(x, dtype=np.int64)
        dists = self.distributions(x)
        m = len(dists)
        if tau == 0 or m == 0:
            return x[None, :].copy(), np.ones(1), 1.0
        tail = mass_tolerance / (2 * m)
        marginals = [d.truncated_pmf(tail, tau) for d in dists]
        box = math.prod(len(pk) for pk in marginals)
        if box > size_cap:
            raise SupportCapError(f"count box of size {box} exceeds cap {size_cap} at x={x.tolist()}")
        disp = np.zeros((1, self.net.n_species), dtype=np.int64)
        w = np.ones(1)
        captured = 1.0
        for j, pk in enumerate(marginals):
            captured *= float(pk.sum())
            if len(pk) == 1:
                w = w * pk[0]
                continue
            ks = np.arange(len(pk))
            disp = (disp[:, None, :] + ks[None, :, None] * self.net.nu[:, j]).reshape(-1, self.net.n_species)
            w = np.outer(w, pk).reshape(-1)
            disp, w = aggregate_rows(disp, w)
        return x + disp, w, captured

    def transition_pmf(self, x, tau: float, mass_tolerance: float = 1e-12, size_cap: int = 10**7):
        states, w, captured = self.transition_arrays(x, tau, mass_tolerance, size_cap)
        return SparsePmf.from_arrays(states, w), captured


def _slopes(overrides: dict | None) -> float:
    overrides = dict(overrides or {})
    scale = float(overrides.pop("rate_scale", 1.0))
    if overrides:
        raise ValueError(f"unknown kernel overrides: {sorted(overrides)}")
    if not scale >= 0:
        raise ValueError("rate_scale must be non-negative")
    return scale


def kernel_explicit_tau(net: ReactionNetwork, overrides: dict | None = None) -> TauLeapKernel:
    """``K_j ~ Poisson(a_j(x) tau)``, independent."""
    scale = _slopes(overrides)
    name = "explicit" if scale == 1.0 else f"explicit(rate_scale={scale:g})"

    def laws(x):
        a = net.propensities(x)
        return [CountDistribution("poisson", LinearParam(scale * float(aj))) for aj in a]

    return TauLeapKernel(name, net, laws)


def kernel_midpoint_tau(net: ReactionNetwork, overrides: dict | None = None) -> TauLeapKernel:
    """``K_j ~ Poisson(a_j(x*) tau)`` at the rounded half-step predictor ``x*``."""
    scale = _slopes(overrides)
    name = "midpoint" if scale == 1.0 else f"midpoint(rate_scale={scale:g})"

    def laws(x):
        xt = tuple(int(v) for v in x)
        half = tuple(float(v) for v in 0.5 * (net.nu @ net.propensities(x)))
        return [CountDistribution("poisson", MidpointParam(net, xt, j, scale, half)) for j in range(net.n_reactions)]

    return TauLeapKernel(name, net, laws)


@dataclass(frozen=True)
class RemmRoles:
    """Reaction and species indices matched to the REMM update pattern."""

    bind: int      # A + B -> C
    unbind: int    # C -> A + B
    birth: int     # B -> 2B
    death: int     # B -> 0
    a: int
    b: int
    c: int


def match_remm_pattern(net: ReactionNetwork) -> RemmRoles:
    """Locate a reversible binding pair plus birth and death of one binding partner."""
    if net.n_reactions != 4:
        raise KernelNotApplicable("REMM kernel needs exactly four reactions")
    specs = net.propensity_specs
    if any(s.kind != "mass_action" for s in specs):
        raise KernelNotApplicable("REMM kernel needs mass-action propensities")
    nu = net.nu
    for bind in range(4):
        reac = dict(specs[bind].reactants)
        if sorted(reac.values()) != [1, 1] or len(reac) != 2:
            continue
        s1, s2 = sorted(reac)
        col = nu[:, bind]
        products = [i for i in range(net.n_species) if col[i] > 0]
        if len(products) != 1 or col[products[0]] != 1:
            continue
        c = products[0]
        expect = np.zeros(net.n_species, dtype=np.int64)
        expect[[s1, s2]] = -1
        expect[c] = 1
        if not np.array_equal(col, expect):
            continue
        rest = [j for j in range(4) if j != bind]
        unbind = [j for j in rest if np.array_equal(nu[:, j], -expect) and dict(specs[j].reactants) == {c: 1}]
        if len(unbind) != 1:
            continue
        for b, a in ((s1, s2), (s2, s1)):
            e_b = np.zeros(net.n_species, dtype=np.int64)
            e_b[b] = 1
            others = [j for j in rest if j != unbind[0]]
            birth = [j for j in others if np.array_equal(nu[:, j], e_b) and dict(specs[j].reactants) == {b: 1}]
            death = [j for j in others if np.array_equal(nu[:, j], -e_b) and dict(specs[j].reactants) == {b: 1}]
            if len(birth) == 1 and len(death) == 1:
                return RemmRoles(bind, unbind[0], birth[0], death[0], a, b, c)
    raise KernelNotApplicable(
        "REMM kernel needs A + B <-> C (mass action), B -> 2B and B -> 0"
    )


def kernel_remm_tau(net: ReactionNetwork, overrides: dict | None = None) -> TauLeapKernel:
    """Binomial updates for the binding pair and death, Poisson births.

    With ``m = min(x_a, x_b)`` the binding count is ``Binomial(m, p_bind)``,
    unbinding ``Binomial(x_c, p_unbind)``, births ``Poisson(lam)`` and deaths
    ``Binomial(x_b, p_death)`` where, for ``s = c1' + c2``,

        p_bind   = c1' / s (1 - exp(-s tau))
        p_unbind = c2  / s (1 - exp(-s tau))
        lam      = c3 x_b / c4 (1 - exp(-c4 tau))
        p_death  = 1 - exp(-c4 tau)

    and ``c1' = max(x_a, x_b) c1``, or ``(max(x_a, x_b) + 1) c1`` when
    ``m == 0``.  Binding counts never exceed ``m``, so the superlinear
    update alone cannot leave the orthant.
    """
    scale = _slopes(overrides)
    roles = match_remm_pattern(net)
    specs = net.propensity_specs
    c1, c2, c3, c4 = (specs[j].rate for j in (roles.bind, roles.unbind, roles.birth, roles.death))
    name = "remm" if scale == 1.0 else f"remm(rate_scale={scale:g})"

    def laws(x):
        xa, xb, xc = int(x[roles.a]), int(x[roles.b]), int(x[roles.c])
        m = min(xa, xb)
        c1t = (max(xa, xb) + (1 if m == 0 else 0)) * c1
        s = c1t + c2
        out = [ZERO] * 4
        out[roles.bind] = CountDistribution("binomial", SaturatingParam(scale * c1t, s), m)
        out[roles.unbind] = CountDistribution("binomial", SaturatingParam(scale * c2, s), xc)
        out[roles.birth] = CountDistribution("poisson", SaturatingParam(scale * c3 * xb, c4))
        out[roles.death] = CountDistribution("binomial", SaturatingParam(scale * c4, c4), xb)
        return out

    return TauLeapKernel(name, net, laws, superlinear_bounded=True)


_CONSTRUCTORS = {
    "explicit": kernel_explicit_tau,
    "midpoint": kernel_midpoint_tau,
    "remm": kernel_remm_tau,
}


def make_kernel(name: str, net: ReactionNetwork, overrides: dict | None = None) -> TauLeapKernel:
    try:
        ctor = _CONSTRUCTORS[name]
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; choose from {', '.join(KERNEL_NAMES)}") from None
    kernel = ctor(net, overrides)
    recipe = (name, tuple(sorted((overrides or {}).items())))
    return replace(kernel, recipe=recipe)
