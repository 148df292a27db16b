from __future__ import annotations

import itertools

import numpy as np
import pytest

from mflab import density_process as dp
from mflab import jsq_reference as jsq
from mflab import meanfield_ode as ode
from mflab import ring_sim
from mflab.errors import StateSpaceTooLarge
from mflab.harness import rate_table_mismatch
from mflab.state_space import total_variation, validate_membership

LAM, MU = 0.7, 1.0


def rates(m, **kw):
    return {(t.remove, t.add): t.rate for t in dp.enabled_transitions(m, 1, LAM, MU, **kw)}


def test_count_vector_checks():
    with pytest.raises(ValueError):
        dp.CountVector({(0, 0): 2}, 3)
    m = dp.CountVector({(0, 1): 1, (1, 0): 2}, 3)
    assert validate_membership(m.proportions(exact=True), n=3)


def test_strict_pair_arrival():
    m = dp.CountVector({(0, 1): 3, (2, 0): 7}, 10)
    r = rates(m)
    assert r[((0, 1), (1, 1))] == pytest.approx(6 * LAM)
    assert ((0, 1), (0, 2)) not in r
    assert r[((2, 0), (2, 1))] == pytest.approx(14 * LAM)


def test_tied_pair():
    r = rates(dp.CountVector({(2, 2): 4}, 4))
    assert r == pytest.approx({
        ((2, 2), (3, 2)): 4 * LAM, ((2, 2), (2, 3)): 4 * LAM,
        ((2, 2), (1, 2)): 4 * MU, ((2, 2), (2, 1)): 4 * MU,
    })


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_empty_supernode(k):
    u = (0,) * (k + 1)
    trans = dp.enabled_transitions(dp.CountVector.point_mass(u, 5), k, LAM, MU, general=True)
    assert len(trans) == k + 1
    assert all(t.rate == pytest.approx(5 * LAM) for t in trans)


def test_pair_path_matches_general_path():
    for u in itertools.product(range(4), repeat=2):
        m = dp.CountVector({u: 3}, 3)
        a = rates(m, cap=3)
        b = rates(m, cap=3, general=True)
        assert a == pytest.approx(b)


def test_rate_table_exhaustive():
    assert rate_table_mismatch(3, 3, LAM, MU) == 0.0
    assert rate_table_mismatch(3, 3, LAM, MU, literal=True) > 0.0


def test_total_rate_when_all_busy():
    rng = np.random.default_rng(0)
    for k in (1, 2):
        counts = {}
        for _ in range(6):
            u = tuple(int(x) for x in rng.integers(1, 5, size=k + 1))
            counts[u] = counts.get(u, 0) + 1
        m = dp.CountVector(counts, 6)
        total = sum(t.rate for t in dp.enabled_transitions(m, k, LAM, MU))
        assert total == pytest.approx(6 * (k + 1) * (LAM + MU))


def test_zero_arrivals_absorbing():
    m0 = dp.CountVector.point_mass((0, 0), 4)
    seen = []
    final = dp.gillespie_simulate(m0, 1, 0.0, MU, 50.0, observer=lambda t, m: seen.append(m))
    assert final == m0
    assert len(seen) == 1


def test_simulation_reproducible():
    m0 = dp.CountVector.point_mass((0, 0), 5)
    a = dp.gillespie_simulate(m0, 1, LAM, MU, 20.0, seed=11)
    b = dp.gillespie_simulate(m0, 1, LAM, MU, 20.0, seed=11)
    assert a == b


def test_generator_apply_examples():
    m = dp.CountVector.point_mass((0, 0), 7)
    assert dp.generator_apply(lambda z: 3.0, m, 1, LAM, MU) == 0.0
    assert dp.generator_apply(lambda z: z[(0, 0)], m, 1, LAM, MU) == pytest.approx(-2 * LAM)


@pytest.mark.parametrize("k,cap", [(1, 4), (2, 3)])
def test_drift_identity(k, cap):
    rng = np.random.default_rng(5)
    types = list(itertools.product(range(cap + 1), repeat=k + 1))
    for _ in range(15):
        n = int(rng.integers(1, 6))
        counts = {}
        for i in rng.integers(0, len(types), size=n):
            counts[types[i]] = counts.get(types[i], 0) + 1
        m = dp.CountVector(counts, n)
        z = m.proportions().to_dense(cap)
        drift = ode.rhs_general(z, k, LAM, MU)
        for u in types:
            got = dp.generator_apply(lambda p: p[u], m, k, LAM, MU, cap=cap)
            assert abs(got - drift[u]) <= 1e-12


def test_exact_single_queue_geometric():
    res = dp.exact_stationary(1, 0, 0.5, MU, 40)
    for (ti,), p in zip(res.states, res.pi):
        if res.types[ti][0] <= 20:
            assert p == pytest.approx(jsq.mm1_analytic(0.5, MU, res.types[ti][0]), abs=1e-10)


def test_exact_generator_rows():
    res = dp.exact_stationary(3, 1, 0.5, MU, 3)
    assert np.max(np.abs(res.generator.row_sums())) < 1e-12
    assert res.residual < 1e-12
    assert res.mean_proportion.total() == pytest.approx(1.0)


def test_exact_matches_pair_law():
    """Each super node is its own JSQ pair, so E[Z] equals the pair law."""
    res = dp.exact_stationary(2, 1, 0.3, MU, 6)
    pair = jsq.jsq_stationary(1, 0.3, MU, 6)
    assert total_variation(res.mean_proportion, pair) < 1e-10


def test_two_node_ring_proportion_is_pair_law():
    ring = ring_sim.exact_ring_proportion(2, 1, 0.3, MU, 6)
    pair = jsq.jsq_stationary(1, 0.3, MU, 6)
    assert total_variation(ring, pair) < 1e-10


def test_state_guard():
    assert dp.count_states(3, 1, 3) == 816
    with pytest.raises(StateSpaceTooLarge):
        dp.exact_stationary(10, 1, 0.5, MU, 10)


def test_gillespie_occupation_matches_exact():
    n, cap, lam = 3, 3, 0.5
    exact = dp.exact_stationary(n, 1, lam, MU, cap)
    index = {s: i for i, s in enumerate(exact.states)}
    type_index = {u: i for i, u in enumerate(exact.types)}
    occ = np.zeros(len(exact.states))
    last = [0.0, None]

    def obs(t, m):
        if last[1] is not None:
            occ[last[1]] += t - last[0]
        key = tuple(sorted(type_index[u] for u, c in m.counts.items() for _ in range(c)))
        last[:] = [t, index[key]]

    dp.gillespie_simulate(dp.CountVector.point_mass((0, 0), n), 1, lam, MU, 4000.0, seed=3, observer=obs, cap=cap)
    occ /= occ.sum()
    assert 0.5 * np.abs(occ - exact.pi).sum() < 0.08
