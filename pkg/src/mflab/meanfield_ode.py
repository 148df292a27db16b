"""Mean-field ODE for the proportion process, truncated to a box.

The state is a dense array ``z`` of shape ``(B+1,)*(k+1)``.  Arrivals that
would push a coordinate past ``B`` are blocked, which keeps the truncated
system exactly conservative and makes it the forward equation of the
truncated JSQ chain in :mod:`mflab.jsq_reference`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConvergenceError, InstabilityError

log = logging.getLogger(__name__)

DEFAULT_CAP = 40
CLIP_TOL = 1e-12
DRIFT_ABORT = 1e-6


@dataclass
class OdeState:
    z: np.ndarray
    t: float = 0.0
    residual: float | None = None

    @property
    def k(self) -> int:
        return self.z.ndim - 1

    @property
    def cap(self) -> int:
        return self.z.shape[0] - 1

    @classmethod
    def point_mass(cls, k: int, cap: int, u=None) -> "OdeState":
        z = np.zeros((cap + 1,) * (k + 1))
        z[tuple(u) if u is not None else (0,) * (k + 1)] = 1.0
        return cls(z)

    def boundary_mass(self) -> float:
        return boundary_mass(self.z)


def boundary_mass(z: np.ndarray) -> float:
    """Mass on tuples with at least one coordinate at the cap."""
    cap = z.shape[0] - 1
    mask = np.zeros(z.shape, dtype=bool)
    for ax in range(z.ndim):
        sl = [slice(None)] * z.ndim
        sl[ax] = cap
        mask[tuple(sl)] = True
    return float(z[mask].sum())


def selection_coefficient(i: int, j: int) -> float:
    """Probability that an arrival to a pair holding ``(i, j)`` joins the first queue."""
    if i < j:
        return 1.0
    if i == j:
        return 0.5
    return 0.0


def selection_coefficient_general(value: int, others) -> float:
    """Share of arrivals received by a queue of length ``value`` among ``others``.

    Nonzero only when ``value`` is the minimum of the whole tuple, in which
    case the arrival is split evenly over the tied minima.
    """
    others = list(others)
    if any(o < value for o in others):
        return 0.0
    return 1.0 / (1 + sum(1 for o in others if o == value))


def _shift_from_below(a: np.ndarray, axis: int) -> np.ndarray:
    """``out[..., i, ...] = a[..., i-1, ...]`` with zero fill at ``i = 0``."""
    out = np.zeros_like(a)
    dst = [slice(None)] * a.ndim
    src = [slice(None)] * a.ndim
    dst[axis] = slice(1, None)
    src[axis] = slice(None, -1)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _shift_from_above(a: np.ndarray, axis: int) -> np.ndarray:
    """``out[..., i, ...] = a[..., i+1, ...]`` with zero fill at the cap."""
    out = np.zeros_like(a)
    dst = [slice(None)] * a.ndim
    src = [slice(None)] * a.ndim
    dst[axis] = slice(None, -1)
    src[axis] = slice(1, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


@lru_cache(maxsize=32)
def _tables(k: int, cap: int):
    """Per-coordinate arrival shares, busy indicators and the open-arrival mask."""
    shape = (cap + 1,) * (k + 1)
    grids = np.indices(shape)
    mins = grids.min(axis=0)
    at_min = grids == mins
    mult = at_min.sum(axis=0)
    shares = []
    busy = []
    for c in range(k + 1):
        w = np.where(at_min[c] & (grids[c] < cap), 1.0 / mult, 0.0)
        shares.append(w)
        busy.append((grids[c] > 0).astype(float))
    # arrivals are blocked only when every coordinate sits at the cap
    open_mask = (mins < cap).astype(float)
    for a in (*shares, *busy, open_mask):
        a.setflags(write=False)
    return tuple(shares), tuple(busy), open_mask


@lru_cache(maxsize=8)
def _pair_table(cap: int) -> tuple[np.ndarray, np.ndarray]:
    """``a(i-1, j)`` and ``a(j-1, i)`` laid out at index ``(i, j)``; zero off-box."""
    a_im1 = np.zeros((cap + 1, cap + 1))
    a_jm1 = np.zeros((cap + 1, cap + 1))
    for i in range(cap + 1):
        for j in range(cap + 1):
            if i > 0:
                a_im1[i, j] = selection_coefficient(i - 1, j)
            if j > 0:
                a_jm1[i, j] = selection_coefficient(j - 1, i)
    a_im1.setflags(write=False)
    a_jm1.setflags(write=False)
    return a_im1, a_jm1


def rhs_k1(z: np.ndarray, lam: float, mu: float) -> np.ndarray:
    """Pair (k = 1) mean-field drift written term by term.

    ``dz_ij = 2 lam (z_(i-1)j a(i-1,j) + z_i(j-1) a(j-1,i) - z_ij)
    + mu (z_(i+1)j - z_ij 1{i>0} + z_i(j+1) - z_ij 1{j>0})``
    with the arrival outflow dropped at the corner ``(B, B)``.
    """
    if z.ndim != 2:
        raise ValueError("rhs_k1 needs a 2-d array")
    cap = z.shape[0] - 1
    a_im1, a_jm1 = _pair_table(cap)
    _, busy, open_mask = _tables(1, cap)
    z_im1 = _shift_from_below(z, 0)
    z_jm1 = _shift_from_below(z, 1)
    z_ip1 = _shift_from_above(z, 0)
    z_jp1 = _shift_from_above(z, 1)
    arrivals = z_im1 * a_im1 + z_jm1 * a_jm1 - z * open_mask
    services = z_ip1 - z * busy[0] + z_jp1 - z * busy[1]
    return (2 * lam) * arrivals + mu * services


def rhs_general(z: np.ndarray, k: int, lam: float, mu: float, *, literal: bool = False) -> np.ndarray:
    """Mean-field drift for ``k+1`` coordinates.

    Arrivals enter a tuple at rate ``(k+1)*lam`` times the selection share of
    its predecessor, and leave at rate ``(k+1)*lam``.  With ``literal=True``
    the arrival constant is ``k*lam`` and the arrival outflow term is left
    out, reproducing the general-k system exactly as it was printed; that
    variant is not conservative and is kept for comparison only.
    """
    if z.ndim != k + 1:
        raise ValueError(f"array has {z.ndim} axes, expected {k + 1}")
    cap = z.shape[0] - 1
    shares, busy, open_mask = _tables(k, cap)
    arrivals = 0.0
    services = 0.0
    for c in range(k + 1):
        arrivals = arrivals + _shift_from_below(z * shares[c], c)
    if not literal:
        arrivals = arrivals - z * open_mask
    for c in range(k + 1):
        services = services + _shift_from_above(z, c)
        services = services - z * busy[c]
    const = (k * lam) if literal else ((k + 1) * lam)
    return const * arrivals + mu * services


def rhs(z: np.ndarray, lam: float, mu: float, *, literal: bool = False) -> np.ndarray:
    k = z.ndim - 1
    if k == 1 and not literal:
        return rhs_k1(z, lam, mu)
    return rhs_general(z, k, lam, mu, literal=literal)


@dataclass
class Trajectory:
    times: list[float]
    states: list[np.ndarray]
    # pre-renormalisation diagnostics over every step
    max_mass_error: float = 0.0
    min_entry: float = 0.0
    clip_events: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> OdeState:
        return OdeState(self.states[-1], self.times[-1])


def _rk4_step(f, z, dt):
    k1 = f(z)
    k2 = f(z + (0.5 * dt) * k1)
    k3 = f(z + (0.5 * dt) * k2)
    k4 = f(z + dt * k3)
    return z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(
    z0: OdeState | np.ndarray,
    k: int,
    lam: float,
    mu: float,
    t_max: float,
    dt: float | None = None,
    *,
    sample_every: float | None = None,
    literal: bool = False,
) -> Trajectory:
    """Fixed-step RK4 integration with per-step renormalisation.

    Entries that dip below ``-1e-12`` are clipped to zero (and logged);
    the step aborts with :class:`ConvergenceError` if the total mass has
    drifted by more than ``1e-6`` before renormalisation.
    """
    z = np.array(z0.z if isinstance(z0, OdeState) else z0, dtype=float)
    t = z0.t if isinstance(z0, OdeState) else 0.0
    if z.ndim != k + 1:
        raise ValueError("state dimension does not match k")
    if dt is None:
        dt = 0.01 / mu if mu > 0 else 0.01
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_steps = int(round(t_max / dt))
    every = max(1, int(round(sample_every / dt))) if sample_every else 1

    def f(x):
        return rhs(x, lam, mu, literal=literal)

    traj = Trajectory([t], [z.copy()], min_entry=float(z.min()))
    for step in range(1, n_steps + 1):
        z = _rk4_step(f, z, dt)
        t = traj.times[0] + step * dt
        mass = float(z.sum())
        traj.max_mass_error = max(traj.max_mass_error, abs(mass - 1.0))
        traj.min_entry = min(traj.min_entry, float(z.min()))
        if abs(float(np.abs(z).sum()) - 1.0) > DRIFT_ABORT:
            raise ConvergenceError(f"mass drift at t={t:.4g}; reduce dt", residual=abs(mass - 1.0))
        neg = z < -CLIP_TOL
        if neg.any():
            traj.clip_events += int(neg.sum())
            log.debug("clipped %d entries at t=%.4g", int(neg.sum()), t)
            z[neg] = 0.0
        z /= z.sum()
        if step % every == 0 or step == n_steps:
            traj.times.append(t)
            traj.states.append(z.copy())
    return traj


def fixed_point(
    k: int,
    lam: float,
    mu: float,
    cap: int = DEFAULT_CAP,
    tolerance: float = 1e-10,
    *,
    dt: float | None = None,
    max_time: float = 20_000.0,
    check_every: int = 200,
    literal: bool = False,
) -> OdeState:
    """Integrate from the empty system until ``max |rhs| <= tolerance``.

    Raises
    ------
    InstabilityError
        If ``lam >= mu``.
    ConvergenceError
        If the residual is still above ``tolerance`` at ``max_time``.
    """
    if lam >= mu:
        raise InstabilityError(f"lambda={lam} >= mu={mu}")
    if dt is None:
        dt = 0.01 / mu
    z = OdeState.point_mass(k, cap).z

    def f(x):
        return rhs(x, lam, mu, literal=literal)

    t = 0.0
    residual = float(np.max(np.abs(f(z))))
    while residual > tolerance:
        if t >= max_time:
            raise ConvergenceError(
                f"fixed point not reached by t={t:.0f} (residual {residual:.3e})", residual=residual
            )
        for _ in range(check_every):
            z = _rk4_step(f, z, dt)
        z[z < 0] = 0.0
        z /= z.sum()
        t += check_every * dt
        residual = float(np.max(np.abs(f(z))))
    return OdeState(z, t, residual)
