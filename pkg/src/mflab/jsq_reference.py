"""Symmetric join-the-shortest-queue among k+1 servers, solved on a truncated box.

This is the auxiliary model whose stationary queue-length law ``P^k`` is the
mean-field fixed point.  The sparse generator type and the stationary solver
defined here are shared with :mod:`mflab.density_process` and the exact ring
solve in :mod:`mflab.ring_sim`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .errors import InstabilityError, StructuralError, SymmetryError
from .state_space import ProportionVector

DIRECT_SOLVE_LIMIT = 200_000
RESIDUAL_TOL = 1e-12


@dataclass
class SparseGenerator:
    """CTMC rate matrix over an ordered list of states.

    ``q`` is CSR with the (negative) diagonal included, so every row sums to
    zero.  ``states`` is an ``(n, d)`` integer array or any sequence of
    hashable state identifiers.
    """

    states: object
    q: sp.csr_matrix

    @classmethod
    def from_rates(cls, states, rows, cols, rates) -> "SparseGenerator":
        n = len(states)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        rates = np.asarray(rates, dtype=float)
        if np.any(rates < 0):
            raise ValueError("negative off-diagonal rate")
        if np.any(rows == cols):
            raise ValueError("self-loop passed as an off-diagonal rate")
        off = sp.csr_matrix((rates, (rows, cols)), shape=(n, n))
        off.sum_duplicates()
        out = np.asarray(off.sum(axis=1)).ravel()
        q = (off - sp.diags(out)).tocsr()
        q.sort_indices()
        return cls(states, q)

    @property
    def n_states(self) -> int:
        return self.q.shape[0]

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.q.sum(axis=1)).ravel()

    def off_diagonal(self) -> sp.csr_matrix:
        off = self.q - sp.diags(self.q.diagonal())
        off.eliminate_zeros()
        return off.tocsr()


def generator_residual(g: SparseGenerator, pi: np.ndarray) -> float:
    """``max |pi Q|``."""
    return float(np.max(np.abs(g.q.T @ pi))) if g.n_states else 0.0


def _check_irreducible(g: SparseGenerator) -> None:
    if g.n_states <= 1:
        return
    n_comp, _ = connected_components(g.off_diagonal(), directed=True, connection="strong")
    if n_comp != 1:
        raise StructuralError(f"generator is reducible ({n_comp} communicating classes)")


def _solve_direct(g: SparseGenerator) -> np.ndarray:
    n = g.n_states
    a = g.q.T.tocsr()
    # replace the last balance equation with the normalisation sum(pi) = 1
    a = sp.vstack([a[: n - 1], sp.csr_matrix(np.ones((1, n)))]).tocsc()
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        lu = splu(a)
    except RuntimeError as exc:
        raise StructuralError(f"factorisation failed: {exc}") from exc
    pi = lu.solve(b)
    # one step of iterative refinement
    pi = pi + lu.solve(b - a @ pi)
    if not np.all(np.isfinite(pi)):
        raise StructuralError("non-finite stationary vector")
    return pi


def _solve_uniformized(g: SparseGenerator, tol: float, max_iter: int) -> np.ndarray:
    n = g.n_states
    rate = 1.01 * float(np.max(-g.q.diagonal()))
    if rate <= 0:
        raise StructuralError("generator has no transitions")
    pt = (sp.identity(n, format="csr") + g.q / rate).T.tocsr()
    pi = np.full(n, 1.0 / n)
    residual = np.inf
    for _ in range(max_iter):
        pi = pt @ pi
        pi /= pi.sum()
        residual = generator_residual(g, pi)
        if residual <= tol:
            return pi
    raise StructuralError(f"uniformized power iteration did not converge (residual {residual:.3e})")


def stationary_distribution(
    g: SparseGenerator,
    *,
    method: str = "auto",
    tol: float = RESIDUAL_TOL,
    max_iter: int = 200_000,
) -> np.ndarray:
    """Solve ``pi Q = 0`` with ``sum(pi) = 1``.

    Parameters
    ----------
    g : SparseGenerator
        Irreducible generator.
    method : {"auto", "direct", "iterative"}
        ``auto`` factorises for up to 2e5 states and falls back to
        power iteration on the uniformized chain above that.
    tol : float
        Target ``max |pi Q|`` for the iterative route.

    Raises
    ------
    StructuralError
        Reducible generator, failed factorisation or non-convergence.
    """
    _check_irreducible(g)
    if g.n_states == 1:
        return np.ones(1)
    if method == "auto":
        method = "direct" if g.n_states <= DIRECT_SOLVE_LIMIT else "iterative"
    if method == "direct":
        pi = _solve_direct(g)
    elif method == "iterative":
        pi = _solve_uniformized(g, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    pi = np.where(np.abs(pi) < 1e-300, 0.0, pi)
    if np.min(pi) < -1e-10:
        raise StructuralError(f"stationary vector has negative mass {np.min(pi):.3e}")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def box_states(k: int, cap: int) -> np.ndarray:
    """All tuples of ``{0..cap}^(k+1)`` in lexicographic (C) order."""
    shape = (cap + 1,) * (k + 1)
    return np.stack(np.unravel_index(np.arange((cap + 1) ** (k + 1)), shape), axis=1)


def jsq_generator(k: int, lam: float, mu: float, cap: int) -> SparseGenerator:
    """Generator of JSQ among ``k+1`` queues on ``{0..cap}^(k+1)``.

    Arrivals come at total rate ``(k+1)*lam`` and split evenly over the tied
    shortest queues; an arrival that would push a queue past ``cap`` is
    dropped.  Each busy server completes at rate ``mu``.
    """
    if cap < 1:
        raise ValueError("cap must be at least 1")
    if k < 0:
        raise ValueError("k must be nonnegative")
    d = k + 1
    states = box_states(k, cap)
    n = len(states)
    idx = np.arange(n)
    strides = (cap + 1) ** np.arange(d - 1, -1, -1)

    mins = states.min(axis=1)
    at_min = states == mins[:, None]
    mult = at_min.sum(axis=1)
    rows, cols, rates = [], [], []
    for c in range(d):
        arr = at_min[:, c] & (states[:, c] < cap)
        if lam > 0:
            rows.append(idx[arr])
            cols.append(idx[arr] + strides[c])
            rates.append(d * lam / mult[arr])
        dep = states[:, c] > 0
        if mu > 0:
            rows.append(idx[dep])
            cols.append(idx[dep] - strides[c])
            rates.append(np.full(int(dep.sum()), float(mu)))
    if rows:
        rows, cols, rates = np.concatenate(rows), np.concatenate(cols), np.concatenate(rates)
    return SparseGenerator.from_rates(states, rows, cols, rates)


def mm1_analytic(lam: float, mu: float, n: int) -> float:
    """Stationary probability of ``n`` jobs in an M/M/1 queue."""
    if lam >= mu:
        raise InstabilityError(f"unstable M/M/1: lambda={lam} >= mu={mu}")
    r = lam / mu
    return (1.0 - r) * r**n


def jsq_stationary(k: int, lam: float, mu: float, cap: int = 40, **solver_kw) -> ProportionVector:
    """Truncated ``P^k`` as a proportion vector.

    ``meta`` carries ``k, lambda, mu, B, residual, boundary_mass``.
    """
    if lam >= mu:
        raise InstabilityError(f"lambda={lam} >= mu={mu}")
    g = jsq_generator(k, lam, mu, cap)
    pi = stationary_distribution(g, **solver_kw)
    dense = pi.reshape((cap + 1,) * (k + 1))
    boundary = float(pi[np.any(g.states == cap, axis=1)].sum())
    pv = ProportionVector.from_dense(dense)
    pv.meta.update(
        k=k, **{"lambda": lam}, mu=mu, B=cap,
        residual=generator_residual(g, pi), boundary_mass=boundary,
    )
    return pv


def marginal_queue_law(p: ProportionVector, tol: float = 1e-9) -> np.ndarray:
    """Single-queue marginal of a symmetric law over ``(k+1)``-tuples.

    All coordinate marginals are computed and must agree within ``tol``.
    """
    if not p.entries:
        raise ValueError("empty vector")
    cap = max(max(u) for u in p.entries)
    margins = np.zeros((p.k + 1, cap + 1))
    for u, v in p.entries.items():
        for c, x in enumerate(u):
            margins[c, x] += float(v)
    spread = float(np.max(np.abs(margins - margins[0]))) if p.k > 0 else 0.0
    if spread > tol:
        raise SymmetryError(f"coordinate marginals differ by {spread:.3e}")
    return margins[0]
