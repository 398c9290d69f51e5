"""Reaction networks on the integer lattice.

A network holds the stoichiometric matrix ``nu`` (species x reactions, column
``j`` is the state change of one firing of reaction ``j``) together with one
propensity specification per reaction.  Reactions are indexed from 0.

Models are normally read from a small line-oriented text format::

    # comment
    species A B C
    reaction bind: A + B -> C @ mass_action 0.1
    reaction grow: B -> 2*B @ polynomial 0.3*B
    reaction feed: 0 -> A @ mass_action 1.0
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .pmf import SparsePmf


class ModelError(ValueError):
    """Raised for structurally invalid networks."""


class ParseError(ModelError):
    """Syntax or semantic error in model source, with 1-based position."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class PropensitySpec:
    """Functional form of one propensity.

    ``kind`` is ``"mass_action"`` (``rate`` times the product of
    ``comb(x_i, m_i)`` over the reactants), ``"polynomial"`` (sum of
    ``coeff * prod x_i**e_i`` terms, clamped at zero) or ``"custom"`` (an
    arbitrary callable; only simulation and the oracle accept it).
    """

    kind: str
    rate: float = 0.0
    reactants: tuple[tuple[int, int], ...] = ()
    terms: tuple[tuple[float, tuple[int, ...]], ...] = ()
    func: Callable[[np.ndarray], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "mass_action":
            if not math.isfinite(self.rate) or self.rate < 0:
                raise ModelError(f"mass action rate must be finite and >= 0, got {self.rate}")
            if any(m <= 0 for _, m in self.reactants):
                raise ModelError("reactant multiplicities must be positive")
        elif self.kind == "polynomial":
            for coeff, exps in self.terms:
                if not math.isfinite(coeff):
                    raise ModelError("polynomial coefficients must be finite")
                if any(e < 0 for e in exps):
                    raise ModelError("polynomial exponents must be non-negative")
        elif self.kind == "custom":
            if self.func is None:
                raise ModelError("custom propensity needs a callable")
        else:
            raise ModelError(f"unknown propensity kind {self.kind!r}")

    @classmethod
    def mass_action(cls, rate: float, reactants: dict[int, int] | Sequence[tuple[int, int]] = ()):
        items = reactants.items() if isinstance(reactants, dict) else reactants
        return cls("mass_action", rate=float(rate), reactants=tuple(sorted((int(i), int(m)) for i, m in items)))

    @classmethod
    def polynomial(cls, terms: Sequence[tuple[float, Sequence[int]]]):
        return cls("polynomial", terms=tuple((float(c), tuple(int(e) for e in exps)) for c, exps in terms))

    @classmethod
    def custom(cls, func: Callable[[np.ndarray], float]):
        return cls("custom", func=func)

    @property
    def is_polynomial(self) -> bool:
        return self.kind in ("mass_action", "polynomial")

    def degree(self) -> int:
        """Total polynomial degree (0 for an identically zero propensity)."""
        if self.kind == "mass_action":
            return sum(m for _, m in self.reactants) if self.rate > 0 else 0
        if self.kind == "polynomial":
            live = [sum(exps) for c, exps in self.terms if c != 0]
            return max(live, default=0)
        raise ModelError("degree is only defined for polynomial propensities")

    def evaluate(self, x) -> float:
        return float(self.evaluate_many(np.asarray(x, dtype=np.int64)[None, :])[0])

    def evaluate_many(self, states: np.ndarray) -> np.ndarray:
        """Vectorised evaluation over the rows of ``states``."""
        states = np.asarray(states, dtype=np.int64)
        if self.kind == "mass_action":
            out = np.full(states.shape[0], self.rate, dtype=float)
            for i, m in self.reactants:
                xi = states[:, i]
                h = np.ones(states.shape[0])
                for d in range(m):
                    h = h * (xi - d)
                h = np.where(xi >= m, h / math.factorial(m), 0.0)
                out = out * h
            return out
        if self.kind == "polynomial":
            out = np.zeros(states.shape[0])
            for coeff, exps in self.terms:
                term = np.full(states.shape[0], coeff)
                for i, e in enumerate(exps):
                    if e:
                        term = term * states[:, i].astype(float) ** e
                out = out + term
            return np.maximum(out, 0.0)
        vals = np.array([float(self.func(row)) for row in states])
        return np.maximum(vals, 0.0)


@dataclass(frozen=True, eq=False)
class ReactionNetwork:
    species: tuple[str, ...]
    nu: np.ndarray
    propensity_specs: tuple[PropensitySpec, ...]
    reaction_ids: tuple[str, ...] = ()

    def __post_init__(self):
        nu = np.array(self.nu, dtype=np.int64)
        if nu.ndim != 2:
            raise ModelError("nu must be a 2-d species x reactions matrix")
        n, m = nu.shape
        if n != len(self.species):
            raise ModelError(f"nu has {n} rows but {len(self.species)} species are declared")
        if m != len(self.propensity_specs):
            raise ModelError(f"nu has {m} columns but {len(self.propensity_specs)} propensities")
        if m and np.any(np.all(nu == 0, axis=0)):
            raise ModelError("every reaction must change the state (zero column in nu)")
        for spec in self.propensity_specs:
            for i, _ in spec.reactants:
                if not 0 <= i < n:
                    raise ModelError(f"reactant index {i} out of range")
            for _, exps in spec.terms:
                if len(exps) != n:
                    raise ModelError("polynomial exponent vector length must equal species count")
        nu.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        ids = tuple(self.reaction_ids) or tuple(f"r{j + 1}" for j in range(m))
        object.__setattr__(self, "reaction_ids", ids)

    @property
    def n_species(self) -> int:
        return self.nu.shape[0]

    @property
    def n_reactions(self) -> int:
        return self.nu.shape[1]

    def propensities(self, x) -> np.ndarray:
        """All ``a_j(x)`` as a length-M array."""
        x = np.asarray(x, dtype=np.int64)
        return np.array([spec.evaluate_many(x[None, :])[0] for spec in self.propensity_specs])

    def propensities_many(self, states: np.ndarray) -> np.ndarray:
        """Propensity matrix of shape (len(states), M)."""
        states = np.asarray(states, dtype=np.int64).reshape(-1, self.n_species)
        if not self.propensity_specs:
            return np.zeros((states.shape[0], 0))
        return np.stack([spec.evaluate_many(states) for spec in self.propensity_specs], axis=1)

    def source(self) -> str:
        """Render back to the text format (custom propensities cannot be rendered)."""
        lines = ["species " + " ".join(self.species)]
        for j, rid in enumerate(self.reaction_ids):
            spec = self.propensity_specs[j]
            if spec.kind == "mass_action":
                lhs_counts = {i: m for i, m in spec.reactants}
            else:
                lhs_counts = {i: -int(v) for i, v in enumerate(self.nu[:, j]) if v < 0}
            rhs_counts = {i: lhs_counts.get(i, 0) + int(self.nu[i, j]) for i in range(self.n_species)}
            lhs = _render_complex(self.species, lhs_counts)
            rhs = _render_complex(self.species, rhs_counts)
            if spec.kind == "mass_action":
                law = f"mass_action {spec.rate!r}"
            elif spec.kind == "polynomial":
                law = "polynomial " + " + ".join(_render_term(self.species, c, e) for c, e in spec.terms)
            else:
                raise ModelError("custom propensities have no text form")
            lines.append(f"reaction {rid}: {lhs} -> {rhs} @ {law}")
        return "\n".join(lines) + "\n"


def _render_complex(species, counts) -> str:
    parts = [(f"{m}*{species[i]}" if m > 1 else species[i]) for i, m in sorted(counts.items()) if m > 0]
    return " + ".join(parts) if parts else "0"


def _render_term(species, coeff, exps) -> str:
    factors = [repr(coeff)]
    for i, e in enumerate(exps):
        if e == 1:
            factors.append(species[i])
        elif e > 1:
            factors.append(f"{species[i]}^{e}")
    return "*".join(factors)


def propensity(net: ReactionNetwork, j: int, x) -> float:
    return net.propensity_specs[j].evaluate(x)


def total_propensity(net: ReactionNetwork, x) -> float:
    return float(np.sum(net.propensities(x)))


@dataclass(frozen=True)
class GeneratorRow:
    diagonal: float
    off_diagonal: tuple[tuple[tuple[int, ...], float], ...]


def generator_row(net: ReactionNetwork, x) -> GeneratorRow:
    """Row ``Q(x, .)``: rate ``a_j(x)`` towards ``x + nu_j`` and ``-a_0(x)`` on the diagonal.

    Reactions with zero propensity are left out.
    """
    x = np.asarray(x, dtype=np.int64)
    rates = net.propensities(x)
    entries = tuple(
        (tuple(int(v) for v in x + net.nu[:, j]), float(rates[j]))
        for j in range(net.n_reactions) if rates[j] > 0
    )
    return GeneratorRow(diagonal=-float(np.sum(rates)), off_diagonal=entries)


def apply_generator(net: ReactionNetwork, g: SparsePmf) -> SparsePmf:
    """Action ``(Qg)(y) = sum_x Q(x, y) g(x)`` on a finite-support measure."""
    states, weights = g.to_arrays(net.n_species)
    if len(weights) == 0:
        return SparsePmf({}, signed=True)
    rates = net.propensities_many(states)
    parts_s = [states]
    parts_w = [-rates.sum(axis=1) * weights]
    for j in range(net.n_reactions):
        parts_s.append(states + net.nu[:, j])
        parts_w.append(rates[:, j] * weights)
    return SparsePmf.from_arrays(np.concatenate(parts_s), np.concatenate(parts_w), signed=True)


# --- text format -----------------------------------------------------------

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_SPECIES_TERM = re.compile(rf"\s*(?:(\d+)\s*\*\s*)?([A-Za-z_][A-Za-z0-9_]*)\s*\Z")


def parse_network(text: str) -> ReactionNetwork:
    """Parse model source into a :class:`ReactionNetwork`.

    Species order follows declaration order.  Raises :class:`ParseError`
    with line and column on any problem.
    """
    species: list[str] = []
    index: dict[str, int] = {}
    reactions = []
    ids: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        body = line.strip()
        keyword, _, rest = body.partition(" ")
        if keyword == "species":
            col = indent + len("species") + 2
            for name in rest.split():
                col = line.index(name, col - 1) + 1
                if not _NAME.match(name):
                    raise ParseError(f"invalid species name {name!r}", lineno, col)
                if name in index:
                    raise ParseError(f"species {name!r} declared twice", lineno, col)
                index[name] = len(species)
                species.append(name)
            if not rest.split():
                raise ParseError("species statement declares nothing", lineno, indent + 1)
        elif keyword == "reaction":
            rid, delta, spec = _parse_reaction(line, lineno, index, len(species))
            if rid in ids:
                raise ParseError(f"reaction id {rid!r} used twice", lineno, line.index(rid) + 1)
            ids.append(rid)
            reactions.append((delta, spec))
        else:
            raise ParseError(f"unknown statement {keyword!r}", lineno, indent + 1)
    n = len(species)
    nu = np.zeros((n, len(reactions)), dtype=np.int64)
    for j, (delta, _) in enumerate(reactions):
        nu[:, j] = delta
    try:
        return ReactionNetwork(tuple(species), nu, tuple(s for _, s in reactions), tuple(ids))
    except ModelError as exc:
        raise ParseError(str(exc), len(text.splitlines()), 1) from exc


def _parse_reaction(line, lineno, index, n_species):
    head, at, law = line.partition("@")
    if not at:
        raise ParseError("missing '@ <rate law>'", lineno, len(line) + 1)
    start = line.index("reaction") + len("reaction")
    rid_part, colon, eqn = head[start:].partition(":")
    rid = rid_part.strip()
    if not colon or not _NAME.match(rid):
        raise ParseError("expected 'reaction <id>:'", lineno, start + 2)
    eqn_col = start + len(rid_part) + 2
    lhs_txt, arrow, rhs_txt = eqn.partition("->")
    if not arrow:
        raise ParseError("missing '->'", lineno, eqn_col)
    lhs = _parse_complex(lhs_txt, line, lineno, index, eqn_col)
    rhs = _parse_complex(rhs_txt, line, lineno, index, eqn_col + len(lhs_txt) + 2)
    delta = np.zeros(n_species, dtype=np.int64)
    for i, m in rhs.items():
        delta[i] += m
    for i, m in lhs.items():
        delta[i] -= m
    law_col = len(head) + 2
    kind, _, args = law.strip().partition(" ")
    if kind == "mass_action":
        try:
            rate = float(args)
        except ValueError:
            raise ParseError(f"bad rate constant {args.strip()!r}", lineno, law_col) from None
        if not math.isfinite(rate):
            raise ParseError("rate constant must be finite", lineno, law_col)
        if rate < 0:
            raise ParseError(f"negative rate constant {rate}", lineno, law_col)
        spec = PropensitySpec.mass_action(rate, lhs)
    elif kind == "polynomial":
        spec = PropensitySpec.polynomial(_parse_polynomial(args, lineno, law_col, index, n_species))
    else:
        raise ParseError(f"unknown rate law {kind!r}", lineno, law_col)
    if not np.any(delta):
        raise ParseError(f"reaction {rid!r} does not change the state", lineno, eqn_col)
    return rid, delta, spec


def _parse_complex(txt, line, lineno, index, col):
    counts: dict[int, int] = {}
    if txt.strip() == "0":
        return counts
    for part in txt.split("+"):
        m = _SPECIES_TERM.match(part)
        if not m:
            raise ParseError(f"cannot parse complex term {part.strip()!r}", lineno, col)
        mult, name = int(m.group(1) or 1), m.group(2)
        if name not in index:
            raise ParseError(f"unknown species {name!r}", lineno, col + part.index(name))
        counts[index[name]] = counts.get(index[name], 0) + mult
        col += len(part) + 1
    return counts


def _parse_polynomial(txt, lineno, col, index, n_species):
    compact = txt.replace(" ", "")
    if not compact:
        raise ParseError("empty polynomial", lineno, col)
    # split on +/- that start a new term (not exponent signs such as 1e-3)
    pieces = re.split(r"(?<![eE*^])(?=[+-])", compact)
    terms = []
    for piece in pieces:
        if not piece or piece in "+-":
            if piece:
                raise ParseError("dangling sign in polynomial", lineno, col)
            continue
        sign = -1.0 if piece.startswith("-") else 1.0
        factors = piece.lstrip("+-").split("*")
        coeff = sign
        exps = [0] * n_species
        for f in factors:
            if re.fullmatch(_NUMBER, f):
                coeff *= float(f)
                continue
            name, _, power = f.partition("^")
            if name not in index:
                raise ParseError(f"unknown species {name!r} in polynomial", lineno, col)
            if power and not power.isdigit():
                raise ParseError(f"bad exponent {power!r}", lineno, col)
            exps[index[name]] += int(power or 1)
        terms.append((coeff, exps))
    return terms


def load_network(path) -> ReactionNetwork:
    with open(path, encoding="utf-8") as fh:
        return parse_network(fh.read())


# --- built-in models ---------------------------------------------------------

BINDING_BIRTH_DEATH_SOURCE = """\
# S1 + S2 <-> S3 binding pair, autocatalytic birth and linear death of S2
species S1 S2 S3
reaction r1: S1 + S2 -> S3 @ mass_action {c1}
reaction r2: S3 -> S1 + S2 @ mass_action {c2}
reaction r3: S2 -> 2*S2 @ mass_action {c3}
reaction r4: S2 -> 0 @ mass_action {c4}
"""

DEFAULT_BINDING_RATES = (0.1, 0.5, 0.3, 0.4)


def binding_birth_death_network(rates: Sequence[float] = DEFAULT_BINDING_RATES) -> ReactionNetwork:
    """Unbounded four-reaction network with one bimolecular (superlinear) channel."""
    c1, c2, c3, c4 = rates
    return parse_network(BINDING_BIRTH_DEATH_SOURCE.format(c1=c1, c2=c2, c3=c3, c4=c4))


def decay_network(rate: float = 1.0) -> ReactionNetwork:
    return parse_network(f"species A\nreaction decay: A -> 0 @ mass_action {rate!r}\n")


def pure_birth_network(rate: float = 1.0) -> ReactionNetwork:
    return parse_network(f"species A\nreaction birth: 0 -> A @ mass_action {rate!r}\n")


def constant_decay_network(rate: float = 1.0) -> ReactionNetwork:
    """Decay at a constant rate; leaves the non-negative lattice from 0."""
    return parse_network(f"species A\nreaction decay: A -> 0 @ polynomial {rate!r}\n")


def superlinear_birth_network(rate: float = 1.0) -> ReactionNetwork:
    """Birth with propensity ``rate * x**2`` (explodes in finite time)."""
    return parse_network(f"species A\nreaction birth: A -> 2*A @ polynomial {rate!r}*A^2\n")


BUILTIN_MODELS = {
    "binding": binding_birth_death_network,
    "decay": decay_network,
    "birth": pure_birth_network,
    "constant_decay": constant_decay_network,
    "superlinear_birth": superlinear_birth_network,
}
