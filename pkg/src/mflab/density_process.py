"""The proportion-process CTMC on count vectors.

A state holds ``m_u = N z_u``, the number of super nodes in configuration
``u``.  Every transition moves one super node from ``u`` to a neighbouring
configuration; the rates make each super node evolve as its own
JSQ(k+1) chain with total arrival rate ``(k+1)*lam``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigurationError, InstabilityError, StateSpaceTooLarge
from .jsq_reference import SparseGenerator, generator_residual, stationary_distribution
from .state_space import ProportionVector, SuperNodeVector

STATE_GUARD = 500_000


@dataclass(frozen=True)
class CountVector:
    counts: Mapping[SuperNodeVector, int]
    n: int

    def __post_init__(self):
        if any(c < 0 for c in self.counts.values()):
            raise ValueError("negative count")
        if sum(self.counts.values()) != self.n:
            raise ValueError(f"counts sum to {sum(self.counts.values())}, expected {self.n}")

    @property
    def k(self) -> int:
        return len(next(iter(self.counts))) - 1

    def key(self) -> tuple:
        return tuple(sorted((u, c) for u, c in self.counts.items() if c))

    def proportions(self, exact: bool = False) -> ProportionVector:
        if exact:
            entries = {u: Fraction(c, self.n) for u, c in self.counts.items() if c}
        else:
            entries = {u: c / self.n for u, c in self.counts.items() if c}
        return ProportionVector(entries, self.k)

    @classmethod
    def point_mass(cls, u: SuperNodeVector, n: int) -> "CountVector":
        return cls({tuple(u): n}, n)


@dataclass(frozen=True)
class Transition:
    remove: SuperNodeVector
    add: SuperNodeVector
    rate: float


def _bump(u: SuperNodeVector, c: int, delta: int) -> SuperNodeVector:
    v = list(u)
    v[c] += delta
    return tuple(v)


def _pair_transitions(u, count, lam, mu, cap):
    """The six explicit pair cases, k = 1."""
    i, j = u
    out = []
    if count == 0:
        return out
    if i < j and (cap is None or i < cap):
        out.append(Transition(u, (i + 1, j), 2 * lam * count))
    if i == j and (cap is None or i < cap):
        out.append(Transition(u, (i + 1, j), lam * count))
    if i > j and (cap is None or j < cap):
        out.append(Transition(u, (i, j + 1), 2 * lam * count))
    if i == j and (cap is None or j < cap):
        out.append(Transition(u, (i, j + 1), lam * count))
    if i > 0:
        out.append(Transition(u, (i - 1, j), mu * count))
    if j > 0:
        out.append(Transition(u, (i, j - 1), mu * count))
    return out


def _general_transitions(u, count, k, lam, mu, cap, literal):
    out = []
    if count == 0:
        return out
    low = min(u)
    targets = [c for c, x in enumerate(u) if x == low]
    arrival = (k if literal else k + 1) * lam * count
    if cap is None or low < cap:
        share = arrival / len(targets)
        for c in targets:
            out.append(Transition(u, _bump(u, c, 1), share))
    for c, x in enumerate(u):
        if x > 0:
            out.append(Transition(u, _bump(u, c, -1), mu * count))
    return out


def supernode_transitions(
    u: SuperNodeVector,
    count: int,
    k: int,
    lam: float,
    mu: float,
    *,
    cap: int | None = None,
    literal: bool = False,
    general: bool = False,
) -> list[Transition]:
    """Transitions out of configuration ``u`` when ``count`` super nodes hold it."""
    if k == 1 and not literal and not general:
        return _pair_transitions(u, count, lam, mu, cap)
    return _general_transitions(u, count, k, lam, mu, cap, literal)


def enabled_transitions(
    m: CountVector,
    k: int,
    lam: float,
    mu: float,
    *,
    cap: int | None = None,
    literal: bool = False,
    general: bool = False,
) -> list[Transition]:
    """All transitions with positive rate from ``m``.

    ``cap`` blocks arrivals that would exceed it.  ``literal`` uses the
    arrival constant ``k*lam`` instead of ``(k+1)*lam``.  ``general`` forces
    the k-generic code path even for ``k = 1``.
    """
    out = []
    for u in sorted(m.counts):
        c = m.counts[u]
        if c:
            out.extend(
                t
                for t in supernode_transitions(u, c, k, lam, mu, cap=cap, literal=literal, general=general)
                if t.rate > 0
            )
    return out


def apply_transition(counts: dict, t: Transition) -> None:
    counts[t.remove] -= 1
    if counts[t.remove] == 0:
        del counts[t.remove]
    counts[t.add] = counts.get(t.add, 0) + 1


def gillespie_simulate(
    initial: CountVector,
    k: int,
    lam: float,
    mu: float,
    horizon: float,
    seed: int | np.random.SeedSequence = 0,
    observer: Callable[[float, CountVector], None] | None = None,
    *,
    cap: int | None = None,
    max_events: int | None = None,
    literal: bool = False,
) -> CountVector:
    """Exact stochastic simulation up to ``horizon`` (or ``max_events`` jumps).

    ``observer(t, state)`` is called at time 0 and after every jump.  A
    state with zero total rate is held until the horizon.
    """
    if horizon <= 0:
        raise ConfigurationError("horizon must be positive")
    rng = np.random.default_rng(seed)
    counts = dict(initial.counts)
    t = 0.0
    if observer is not None:
        observer(t, CountVector(dict(counts), initial.n))
    events = 0
    while max_events is None or events < max_events:
        trans = enabled_transitions(CountVector(counts, initial.n), k, lam, mu, cap=cap, literal=literal)
        rates = np.array([tr.rate for tr in trans])
        total = rates.sum() if len(rates) else 0.0
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t > horizon:
            break
        pick = int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right"))
        apply_transition(counts, trans[min(pick, len(trans) - 1)])
        events += 1
        if observer is not None:
            observer(t, CountVector(dict(counts), initial.n))
    return CountVector(counts, initial.n)


def generator_apply(
    f: Callable[[ProportionVector], float],
    m: CountVector,
    k: int,
    lam: float,
    mu: float,
    *,
    cap: int | None = None,
    literal: bool = False,
) -> float:
    """``sum_t rate_t * (f(z after t) - f(z))`` with ``z = m / N``."""
    before = f(m.proportions())
    acc = 0.0
    for tr in enabled_transitions(m, k, lam, mu, cap=cap, literal=literal):
        after = dict(m.counts)
        apply_transition(after, tr)
        acc += tr.rate * (f(CountVector(after, m.n).proportions()) - before)
    return acc


@dataclass
class DensityStationary:
    states: list[tuple]
    pi: np.ndarray
    types: list[SuperNodeVector]
    mean_proportion: ProportionVector
    boundary_mass: float
    residual: float
    generator: SparseGenerator

    def report(self, params: dict) -> dict:
        return {
            "params": params,
            "truncation B": params.get("B"),
            "boundary_mass": self.boundary_mass,
            "mean_proportion": self.mean_proportion.to_json_dict(),
            "solver_residual": self.residual,
        }


def count_states(n: int, k: int, cap: int) -> int:
    types = (cap + 1) ** (k + 1)
    return math.comb(types + n - 1, n)


def exact_stationary(
    n: int, k: int, lam: float, mu: float, cap: int, *, literal: bool = False
) -> DensityStationary:
    """Stationary law of the count-vector chain on the capped type set.

    States are multisets of ``n`` configurations from ``{0..cap}^(k+1)``,
    enumerated lexicographically over sorted type indices.
    """
    if lam >= mu:
        raise InstabilityError(f"lambda={lam} >= mu={mu}")
    size = count_states(n, k, cap)
    if size > STATE_GUARD:
        raise StateSpaceTooLarge(f"{size} states exceed the guard of {STATE_GUARD}")
    types = list(itertools.product(range(cap + 1), repeat=k + 1))
    type_index = {u: i for i, u in enumerate(types)}
    # per-type moves: (target type index, rate per super node)
    moves = []
    for u in types:
        moves.append(
            [(type_index[t.add], t.rate) for t in supernode_transitions(u, 1, k, lam, mu, cap=cap, literal=literal)]
        )
    states = list(itertools.combinations_with_replacement(range(len(types)), n))
    index = {s: i for i, s in enumerate(states)}
    rows, cols, rates = [], [], []
    for si, s in enumerate(states):
        seen = {}
        for pos, ti in enumerate(s):
            seen.setdefault(ti, pos)
        for ti, pos in seen.items():
            c = s.count(ti)
            rest = s[:pos] + s[pos + 1:]
            for tj, r in moves[ti]:
                target = tuple(sorted(rest + (tj,)))
                rows.append(si)
                cols.append(index[target])
                rates.append(r * c)
    g = SparseGenerator.from_rates(states, rows, cols, rates)
    pi = stationary_distribution(g)

    mean = np.zeros(len(types))
    on_boundary = np.zeros(len(states), dtype=bool)
    edge = np.array([max(u) == cap for u in types])
    for si, s in enumerate(states):
        for ti in s:
            mean[ti] += pi[si] / n
        on_boundary[si] = bool(edge[list(s)].any())
    mean_pv = ProportionVector({types[i]: float(v) for i, v in enumerate(mean) if v > 0}, k)
    return DensityStationary(
        states=states,
        pi=pi,
        types=types,
        mean_proportion=mean_pv,
        boundary_mass=float(pi[on_boundary].sum()),
        residual=generator_residual(g, pi),
        generator=g,
    )
