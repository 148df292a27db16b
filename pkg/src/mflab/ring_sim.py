"""Event-driven simulation of the N-node ring with local shortest-queue routing.

Node ``i`` owns a Poisson(lam) arrival stream.  An arrival on stream ``i``
joins the shortest queue among ``i, i+1, ..., i+k`` (indices mod N), with
ties split uniformly.  Every busy server completes at rate ``mu``.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, InstabilityError
from .jsq_reference import SparseGenerator, generator_residual, stationary_distribution
from .state_space import ProportionVector, SuperNodeVector
from .stats import batch_means


@dataclass(frozen=True)
class RingConfig:
    n_nodes: int
    k_neighbors: int
    lam: float
    mu: float
    seed: int = 0
    horizon: float = 1000.0

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ConfigurationError("n_nodes must be positive")
        if not 0 <= self.k_neighbors <= self.n_nodes - 1:
            raise ConfigurationError(f"k={self.k_neighbors} outside [0, {self.n_nodes - 1}]")
        # zero rates are allowed for degenerate checks; negative ones are not
        if self.lam < 0 or self.mu < 0:
            raise ConfigurationError("rates must be nonnegative")
        if self.horizon <= 0:
            raise ConfigurationError("horizon must be positive")

    @property
    def stable(self) -> bool:
        return self.lam < self.mu


@dataclass
class NetworkState:
    queues: list[int]
    clock: float = 0.0

    def copy(self) -> "NetworkState":
        return NetworkState(list(self.queues), self.clock)


class RandomStream:
    """Buffered uniforms and exponentials from a numpy PCG64 generator."""

    def __init__(self, seed, block: int = 8192):
        if isinstance(seed, np.random.Generator):
            self._gen = seed
        else:
            self._gen = np.random.default_rng(seed)
        self._block = block
        self._u: list[float] = []
        self._e: list[float] = []

    def random(self) -> float:
        if not self._u:
            self._u = self._gen.random(self._block).tolist()
        return self._u.pop()

    def exponential(self) -> float:
        if not self._e:
            self._e = self._gen.standard_exponential(self._block).tolist()
        return self._e.pop()


def replication_seed(seed: int, replication: int) -> np.random.SeedSequence:
    """Independent stream for one replication, derived from ``(seed, replication)``."""
    return np.random.SeedSequence(entropy=seed, spawn_key=(replication,))


def neighbors(i: int, n: int, k: int) -> tuple[int, ...]:
    if k >= n or k < 0:
        raise ConfigurationError(f"k={k} invalid for a ring of {n} nodes")
    if not 0 <= i < n:
        raise ConfigurationError(f"node {i} outside ring of {n}")
    return tuple((i + d) % n for d in range(1, k + 1))


def route_arrival(state: NetworkState | Sequence[int], i: int, k: int, rng) -> int:
    """Target of an arrival on stream ``i``; ties broken with ``rng.random()``."""
    q = state.queues if isinstance(state, NetworkState) else state
    n = len(q)
    if k == 0:
        return i
    best = q[i]
    ties = [i]
    for d in range(1, k + 1):
        j = i + d
        if j >= n:
            j -= n
        v = q[j]
        if v < best:
            best = v
            ties = [j]
        elif v == best:
            ties.append(j)
    if len(ties) == 1:
        return ties[0]
    return ties[int(rng.random() * len(ties))]


def simulate(
    config: RingConfig,
    observer: Callable[[float, NetworkState], None] | None = None,
    *,
    sample_interval: float | None = None,
    sample_start: float = 0.0,
    initial: Sequence[int] | None = None,
    rng: RandomStream | None = None,
) -> NetworkState:
    """Run the ring until ``config.horizon``.

    The observer sees a copy of the state after every event, or, with
    ``sample_interval``, at ``sample_start + j * sample_interval``.
    """
    n, k, lam, mu = config.n_nodes, config.k_neighbors, config.lam, config.mu
    rng = rng or RandomStream(config.seed)
    q = list(initial) if initial is not None else [0] * n
    if len(q) != n or any(x < 0 for x in q):
        raise ConfigurationError("initial state must hold n nonnegative queue lengths")
    # busy servers indexed for O(1) uniform choice
    busy = [i for i in range(n) if q[i] > 0]
    pos = [-1] * n
    for p, i in enumerate(busy):
        pos[i] = p
    arrival_rate = n * lam
    horizon = config.horizon
    t = 0.0
    next_sample = sample_start if sample_interval else None

    if observer is not None and sample_interval is None:
        observer(t, NetworkState(list(q), t))

    while True:
        total = arrival_rate + mu * len(busy)
        t_next = t + rng.exponential() / total if total > 0 else float("inf")
        if next_sample is not None:
            while next_sample <= min(t_next, horizon):
                observer(next_sample, NetworkState(list(q), next_sample))
                next_sample += sample_interval
        if t_next > horizon:
            break
        t = t_next
        x = rng.random() * total
        if x < arrival_rate:
            stream = min(int(x / lam), n - 1)
            j = route_arrival(q, stream, k, rng)
            if q[j] == 0:
                pos[j] = len(busy)
                busy.append(j)
            q[j] += 1
        else:
            j = busy[min(int((x - arrival_rate) / mu), len(busy) - 1)]
            q[j] -= 1
            if q[j] == 0:
                last = busy.pop()
                if last != j:
                    busy[pos[j]] = last
                    pos[last] = pos[j]
                pos[j] = -1
        if observer is not None and sample_interval is None:
            observer(t, NetworkState(list(q), t))
    return NetworkState(q, horizon)


def supernode_view(state: NetworkState | Sequence[int], i: int, k: int) -> SuperNodeVector:
    q = state.queues if isinstance(state, NetworkState) else state
    n = len(q)
    return tuple(q[(i + d) % n] for d in range(k + 1))


def supernode_counts(queues: Sequence[int], k: int) -> Counter:
    n = len(queues)
    if k == 0:
        return Counter((x,) for x in queues)
    ext = list(queues) + list(queues[:k])
    return Counter(tuple(ext[i:i + k + 1]) for i in range(n))


def empirical_proportion(state: NetworkState | Sequence[int], k: int) -> ProportionVector:
    """Fraction of nodes whose super-node view equals each tuple, as exact fractions."""
    q = state.queues if isinstance(state, NetworkState) else state
    n = len(q)
    return ProportionVector({u: Fraction(c, n) for u, c in supernode_counts(q, k).items()}, k)


@dataclass
class StationaryEstimate:
    mean: ProportionVector
    stderr: dict[SuperNodeVector, float]
    n_samples: int
    meta: dict = field(default_factory=dict)


def stationary_estimate(
    config: RingConfig,
    burn_in: float | None = None,
    n_samples: int = 1000,
    sample_gap: float = 1.0,
    *,
    n_batches: int = 20,
    rng: RandomStream | None = None,
) -> StationaryEstimate:
    """Time-average of snapshot proportions after a burn-in, with batch-means errors."""
    if config.lam >= config.mu:
        raise InstabilityError(f"lambda={config.lam} >= mu={config.mu}")
    if burn_in is None:
        burn_in = 10.0 / (config.mu - config.lam)
    if burn_in <= 0 or sample_gap <= 0:
        raise ConfigurationError("burn_in and sample_gap must be positive")
    if n_samples < n_batches:
        raise ConfigurationError(f"need at least {n_batches} samples for batch means")
    k, n = config.k_neighbors, config.n_nodes
    snapshots: list[Counter] = []

    def observe(t, state):
        if len(snapshots) < n_samples:
            snapshots.append(supernode_counts(state.queues, k))

    horizon = burn_in + (n_samples - 1) * sample_gap
    cfg = RingConfig(n, k, config.lam, config.mu, config.seed, horizon)
    simulate(cfg, observe, sample_interval=sample_gap, sample_start=burn_in, rng=rng)

    keys = sorted(set().union(*snapshots))
    series = np.zeros((len(snapshots), len(keys)))
    col = {u: c for c, u in enumerate(keys)}
    for r, snap in enumerate(snapshots):
        for u, c in snap.items():
            series[r, col[u]] = c / n
    mean = series.mean(axis=0)
    se = batch_means(series, n_batches)
    return StationaryEstimate(
        mean=ProportionVector({u: float(mean[col[u]]) for u in keys}, k),
        stderr={u: float(se[col[u]]) for u in keys},
        n_samples=len(snapshots),
        meta={"burn_in": burn_in, "sample_gap": sample_gap},
    )


def ring_generator(n: int, k: int, lam: float, mu: float, cap: int) -> SparseGenerator:
    """Generator of the full ring on ``{0..cap}^n``, built from routing probabilities.

    Arrivals whose chosen queue is already at ``cap`` are dropped.
    """
    if not 0 <= k <= n - 1:
        raise ConfigurationError("k out of range")
    states = list(itertools.product(range(cap + 1), repeat=n))
    strides = [(cap + 1) ** (n - 1 - i) for i in range(n)]
    rows, cols, rates = [], [], []
    for s, q in enumerate(states):
        for i in range(n):
            cand = [(i + d) % n for d in range(k + 1)]
            low = min(q[c] for c in cand)
            winners = [c for c in cand if q[c] == low]
            if low < cap and lam > 0:
                for c in winners:
                    rows.append(s)
                    cols.append(s + strides[c])
                    rates.append(lam / len(winners))
            if q[i] > 0 and mu > 0:
                rows.append(s)
                cols.append(s - strides[i])
                rates.append(mu)
    return SparseGenerator.from_rates(np.array(states), rows, cols, rates)


def exact_ring_stationary(n: int, k: int, lam: float, mu: float, cap: int):
    """Stationary law of the capped ring; returns ``(states, pi, residual)``."""
    g = ring_generator(n, k, lam, mu, cap)
    pi = stationary_distribution(g)
    return g.states, pi, generator_residual(g, pi)


def exact_ring_proportion(n: int, k: int, lam: float, mu: float, cap: int) -> ProportionVector:
    """Mean super-node proportion ``E[Z]`` under the capped ring's stationary law."""
    states, pi, _ = exact_ring_stationary(n, k, lam, mu, cap)
    acc: dict = {}
    for q, p in zip(states, pi):
        for i in range(n):
            u = tuple(int(q[(i + d) % n]) for d in range(k + 1))
            acc[u] = acc.get(u, 0.0) + p / n
    return ProportionVector(acc, k)
