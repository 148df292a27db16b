"""Experiment orchestration: convergence study, oracle case suite, drift comparison."""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from . import density_process as dp
from . import jsq_reference as jsq
from . import meanfield_ode as ode
from . import ring_sim
from .errors import ConfigurationError, InstabilityError
from .state_space import ProportionVector, rho_distance, total_variation
from .stats import batch_means, mean_ci

MAX_NODES = 1_000_000
CONVERGE_HEADER = ["n", "replication", "rho_to_P", "tv_to_P", "stderr", "wall_time_s"]


@dataclass
class ExperimentConfig:
    mode: str = "converge"
    k: int = 1
    lam: float = 0.7
    mu: float = 1.0
    n_list: tuple[int, ...] = (4, 16, 64, 256)
    n_nodes: int = 16
    horizon: float = 1000.0
    burn_in: float | None = None
    samples: int = 1000
    sample_gap: float = 1.0
    trunc: int = 40
    replications: int = 20
    seed: int = 0
    remark2_literal: bool = False
    process: str = "ring"
    workers: int = 1

    def validate(self) -> None:
        if self.replications < 1:
            raise ConfigurationError("replications must be at least 1")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ConfigurationError("n_list must be strictly increasing")
        if self.k < 0:
            raise ConfigurationError("k must be nonnegative")
        if self.process not in ("ring", "density"):
            raise ConfigurationError(f"unknown process {self.process!r}")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["n_list"] = list(self.n_list)
        d["version"] = __version__
        return d


@dataclass
class ConvergenceRow:
    n: int
    replication: int
    rho_to_P: float
    tv_to_P: float
    stderr: float
    wall_time: float

    def csv_fields(self, timing: bool = True) -> list[str]:
        return [
            str(self.n), str(self.replication), repr(self.rho_to_P), repr(self.tv_to_P),
            repr(self.stderr), repr(self.wall_time if timing else 0.0),
        ]


def _density_estimate(n, k, lam, mu, burn_in, samples, gap, seed_seq):
    """Snapshot time-average of the count-vector chain, mirroring the ring estimator."""
    snaps = []
    next_t = [burn_in]
    last = [None]

    def obs(t, m):
        while last[0] is not None and next_t[0] <= t and len(snaps) < samples:
            snaps.append(last[0])
            next_t[0] += gap
        last[0] = dict(m.counts)

    horizon = burn_in + (samples - 1) * gap
    final = dp.gillespie_simulate(dp.CountVector.point_mass((0,) * (k + 1), n), k, lam, mu, horizon, seed_seq, obs)
    last[0] = dict(final.counts)
    while len(snaps) < samples:
        snaps.append(last[0])
    keys = sorted(set().union(*snaps))
    col = {u: c for c, u in enumerate(keys)}
    series = np.zeros((len(snaps), len(keys)))
    for r, s in enumerate(snaps):
        for u, c in s.items():
            series[r, col[u]] = c / n
    mean = series.mean(axis=0)
    se = batch_means(series)
    return (
        ProportionVector({u: float(mean[col[u]]) for u in keys}, k),
        {u: float(se[col[u]]) for u in keys},
    )


def _convergence_cell(args) -> ConvergenceRow:
    cfg, n, rep, target = args
    start = time.perf_counter()
    seed_seq = ring_sim.replication_seed(cfg.seed, rep * 1_000_003 + n)
    burn_in = cfg.burn_in if cfg.burn_in is not None else 10.0 / (cfg.mu - cfg.lam)
    if cfg.process == "ring":
        est = ring_sim.stationary_estimate(
            ring_sim.RingConfig(n, cfg.k, cfg.lam, cfg.mu, seed=0),
            burn_in, cfg.samples, cfg.sample_gap, rng=ring_sim.RandomStream(seed_seq),
        )
        mean, se = est.mean, est.stderr
    else:
        mean, se = _density_estimate(n, cfg.k, cfg.lam, cfg.mu, burn_in, cfg.samples, cfg.sample_gap, seed_seq)
    # noise scale on the same weighting as the distance
    scaled_se = max((s / (u[-1] + 1) for u, s in se.items()), default=0.0)
    return ConvergenceRow(
        n=n, replication=rep,
        rho_to_P=rho_distance(mean, target), tv_to_P=total_variation(mean, target),
        stderr=float(scaled_se), wall_time=time.perf_counter() - start,
    )


@dataclass
class ConvergenceSummary:
    per_n: list[dict]
    non_increasing: bool
    halving_ratio: float
    meta: dict = field(default_factory=dict)


def summarize_convergence(rows: list[ConvergenceRow], n_list) -> ConvergenceSummary:
    per_n = []
    for n in n_list:
        vals = [r.rho_to_P for r in rows if r.n == n]
        tvs = [r.tv_to_P for r in rows if r.n == n]
        m, half = mean_ci(vals)
        per_n.append({
            "n": n, "mean_rho": m, "ci_half_width": half, "mean_tv": float(np.mean(tvs)),
            "replications": len(vals),
        })
    # an increase only counts if the confidence intervals separate
    ok = all(
        b["mean_rho"] - b["ci_half_width"] <= a["mean_rho"] + a["ci_half_width"]
        for a, b in zip(per_n, per_n[1:])
    )
    ratio = per_n[-1]["mean_rho"] / per_n[0]["mean_rho"] if per_n[0]["mean_rho"] > 0 else float("inf")
    return ConvergenceSummary(per_n, ok, ratio)


def run_convergence(cfg: ExperimentConfig) -> tuple[list[ConvergenceRow], ConvergenceSummary]:
    """Distance of the time-averaged proportion to ``P^k`` across N and replications."""
    cfg.validate()
    if cfg.lam >= cfg.mu:
        raise InstabilityError(f"lambda={cfg.lam} >= mu={cfg.mu}")
    if max(cfg.n_list) > MAX_NODES:
        raise ConfigurationError(f"N above {MAX_NODES} is not supported")
    if min(cfg.n_list) <= cfg.k:
        raise ConfigurationError("every N must exceed k")
    target = jsq.jsq_stationary(cfg.k, cfg.lam, cfg.mu, cfg.trunc)
    cells = [(cfg, n, rep, target) for n, rep in itertools.product(cfg.n_list, range(cfg.replications))]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            rows = list(pool.map(_convergence_cell, cells))
    else:
        rows = [_convergence_cell(c) for c in cells]
    summary = summarize_convergence(rows, cfg.n_list)
    summary.meta = {"config": cfg.as_dict(), "P_boundary_mass": target.meta["boundary_mass"]}
    return rows, summary


# --- oracle case suite -------------------------------------------------------

@dataclass
class CaseResult:
    name: str
    passed: bool
    residual: float
    tolerance: float
    detail: str = ""


def eq2_rate_table(u, count, lam, mu):
    """Pair rates as the six-case table, keyed by target configuration."""
    i, j = u
    table = {}
    if i < j:
        table[(i + 1, j)] = 2 * lam * count
    if i == j:
        table[(i + 1, j)] = lam * count
        table[(i, j + 1)] = lam * count
    if i > j:
        table[(i, j + 1)] = 2 * lam * count
    if i > 0:
        table[(i - 1, j)] = mu * count
    if j > 0:
        table[(i, j - 1)] = mu * count
    return table


def rate_table_mismatch(n: int, cap: int, lam: float, mu: float, *, literal: bool = False) -> float:
    """Largest rate discrepancy between the chain and the six-case table over all states.

    The table has no cap, so arrivals into ``cap + 1`` are excluded on both sides.
    """
    types = list(itertools.product(range(cap + 1), repeat=2))
    worst = 0.0
    for combo in itertools.combinations_with_replacement(types, n):
        counts = {}
        for u in combo:
            counts[u] = counts.get(u, 0) + 1
        m = dp.CountVector(counts, n)
        got = {(t.remove, t.add): t.rate for t in dp.enabled_transitions(m, 1, lam, mu, cap=cap, literal=literal)}
        want = {}
        for u, c in counts.items():
            for v, r in eq2_rate_table(u, c, lam, mu).items():
                if max(v) <= cap:
                    want[(u, v)] = r
        for key in got.keys() | want.keys():
            worst = max(worst, abs(got.get(key, 0.0) - want.get(key, 0.0)))
    return worst


def run_cases(*, literal: bool = False, seed: int = 0) -> list[CaseResult]:
    results = []

    # k = 0: JSQ reference and ODE fixed point against the M/M/1 law
    geo = np.array([jsq.mm1_analytic(0.5, 1.0, n) for n in range(41)])
    p0 = jsq.jsq_stationary(0, 0.5, 1.0, 60).to_dense(60)[:41]
    fp0 = ode.fixed_point(0, 0.5, 1.0, 60, literal=literal).z[:41]
    res = max(float(np.max(np.abs(p0 - geo))), float(np.max(np.abs(fp0 - geo))))
    results.append(CaseResult("k0_geometric", res <= 1e-8, res, 1e-8))

    # N = 2, k = 1: ring equals JSQ-2
    _, pi, _ = ring_sim.exact_ring_stationary(2, 1, 0.3, 1.0, 40)
    p1 = jsq.jsq_stationary(1, 0.3, 1.0, 40).to_dense(40).ravel()
    res = float(np.max(np.abs(pi - p1)))
    results.append(CaseResult("case2_ring_equals_jsq2", res <= 1e-8, res, 1e-8))

    res = rate_table_mismatch(3, 3, 0.7, 1.0, literal=literal)
    results.append(CaseResult("pair_rate_table", res == 0.0, res, 0.0))

    for k, cap in ((1, 60), (2, 25)):
        p = jsq.jsq_stationary(k, 0.7, 1.0, cap).to_dense(cap)
        res = float(np.max(np.abs(ode.rhs(p, 0.7, 1.0, literal=literal))))
        results.append(CaseResult(f"fixed_point_residual_k{k}", res <= 1e-8, res, 1e-8))

    rng = np.random.default_rng(seed)
    worst_k1 = 0.0
    worst_k0 = 0.0
    for _ in range(20):
        z = rng.random((9, 9))
        z /= z.sum()
        worst_k1 = max(worst_k1, float(np.max(np.abs(ode.rhs_general(z, 1, 0.7, 1.0) - ode.rhs_k1(z, 0.7, 1.0)))))
        y = rng.random(12)
        y /= y.sum()
        worst_k0 = max(worst_k0, float(np.max(np.abs(ode.rhs_general(y, 0, 0.5, 1.0) - mm1_forward(y, 0.5, 1.0)))))
    results.append(CaseResult("rhs_specialization_k1", worst_k1 == 0.0, worst_k1, 0.0))
    results.append(CaseResult("rhs_specialization_k0", worst_k0 <= 1e-15, worst_k0, 1e-15))
    return results


def mm1_forward(y: np.ndarray, lam: float, mu: float) -> np.ndarray:
    """Truncated M/M/1 forward equation with blocked arrivals at the cap."""
    cap = len(y) - 1
    out = np.zeros_like(y)
    for n in range(cap + 1):
        inflow = (lam * y[n - 1] if n > 0 else 0.0) + (mu * y[n + 1] if n < cap else 0.0)
        outflow = (lam if n < cap else 0.0) + (mu if n > 0 else 0.0)
        out[n] = inflow - outflow * y[n]
    return out


# --- drift comparison -----------------------------------------------------------

def run_drift_comparison(
    n_values=(8, 32, 128),
    k: int = 1,
    lam: float = 0.7,
    mu: float = 1.0,
    t_max: float = 10.0,
    grid: float = 0.1,
    replications: int = 5,
    seed: int = 0,
    coordinate=None,
    cap: int = 40,
    ring_n: int | None = 128,
) -> dict:
    """Density-process paths against the ODE path, both from the empty system."""
    if max(n_values) > 1024:
        raise ConfigurationError("drift comparison is meant for small N")
    u0 = (0,) * (k + 1)
    coord = tuple(coordinate) if coordinate is not None else u0
    times = np.round(np.arange(0.0, t_max + 1e-9, grid), 10)
    traj = ode.integrate(ode.OdeState.point_mass(k, cap), k, lam, mu, t_max, 0.01, sample_every=grid)
    ode_path = np.array([s[coord] for s in traj.states])[: len(times)]

    def sample_path(events):
        # events: list of (t, value); step function on the grid
        vals = np.empty(len(times))
        e = 0
        cur = events[0][1]
        for gi, t in enumerate(times):
            while e < len(events) and events[e][0] <= t:
                cur = events[e][1]
                e += 1
            vals[gi] = cur
        return vals

    per_n = []
    for n in n_values:
        devs = []
        for rep in range(replications):
            events = []
            dp.gillespie_simulate(
                dp.CountVector.point_mass(u0, n), k, lam, mu, t_max,
                ring_sim.replication_seed(seed, rep * 7919 + n),
                lambda t, m: events.append((t, m.counts.get(coord, 0) / n)),
            )
            devs.append(float(np.max(np.abs(sample_path(events) - ode_path))))
        per_n.append({"n": n, "mean_max_deviation": float(np.mean(devs)), "deviations": devs})
    decreasing = all(b["mean_max_deviation"] < a["mean_max_deviation"] for a, b in zip(per_n, per_n[1:]))

    report = {
        "config": {"n_values": list(n_values), "k": k, "lambda": lam, "mu": mu, "t_max": t_max,
                   "replications": replications, "seed": seed, "coordinate": list(coord), "B": cap,
                   "version": __version__},
        "per_n": per_n,
        "decreasing": decreasing,
    }
    if ring_n:
        gaps = []
        for rep in range(replications):
            events = []
            stream = ring_sim.RandomStream(ring_sim.replication_seed(seed, 10_000 + rep))
            ring_sim.simulate(
                ring_sim.RingConfig(ring_n, k, lam, mu, horizon=t_max),
                lambda t, s: events.append((t, ring_sim.supernode_counts(s.queues, k).get(coord, 0) / ring_n)),
                rng=stream,
            )
            gaps.append(float(np.max(np.abs(sample_path(events) - ode_path))))
        report["ring_vs_ode"] = {"n": ring_n, "mean_max_deviation": float(np.mean(gaps))}
    return report
