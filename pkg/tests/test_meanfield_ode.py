from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mflab import jsq_reference as jsq
from mflab import meanfield_ode as ode
from mflab.errors import InstabilityError
from mflab.harness import mm1_forward

LAM, MU = 0.7, 1.0


def random_simplex(rng, shape):
    z = rng.random(shape)
    return z / z.sum()


def test_selection_coefficients():
    assert ode.selection_coefficient(0, 3) == 1
    assert ode.selection_coefficient(2, 2) == 0.5
    assert ode.selection_coefficient(5, 1) == 0
    assert ode.selection_coefficient_general(1, {3, 4}) == 1
    assert ode.selection_coefficient_general(2, [2, 5]) == 0.5
    assert ode.selection_coefficient_general(4, [1, 2]) == 0


def test_point_mass_derivative():
    z = ode.OdeState.point_mass(1, 5).z
    d = ode.rhs_k1(z, LAM, MU)
    assert d[0, 0] == pytest.approx(-2 * LAM)
    assert d[1, 0] == pytest.approx(LAM)
    assert d[0, 1] == pytest.approx(LAM)
    assert np.count_nonzero(d) == 3
    assert abs(d.sum()) < 1e-15


def test_conservation_random_states():
    rng = np.random.default_rng(1)
    for k, cap in ((0, 20), (1, 8), (2, 5)):
        for _ in range(30):
            z = random_simplex(rng, (cap + 1,) * (k + 1))
            assert abs(ode.rhs_general(z, k, LAM, MU).sum()) <= 1e-12
    for _ in range(30):
        z = random_simplex(rng, (9, 9))
        assert abs(ode.rhs_k1(z, LAM, MU).sum()) <= 1e-12


def test_corner_blocks_arrivals():
    z = ode.OdeState.point_mass(1, 4, (4, 4)).z
    d = ode.rhs_k1(z, LAM, MU)
    assert d[4, 4] == pytest.approx(-2 * MU)
    assert abs(d.sum()) < 1e-15


@settings(max_examples=50, deadline=None)
@given(arrays(float, (6, 6, 6), elements=st.floats(0.01, 1)), st.permutations([0, 1, 2]))
def test_permutation_equivariance(z, perm):
    z = z / z.sum()
    d = ode.rhs_general(z, 2, LAM, MU)
    dp = ode.rhs_general(np.transpose(z, perm), 2, LAM, MU)
    np.testing.assert_allclose(dp, np.transpose(d, perm), atol=1e-14)


def test_symmetry_preserved_k1():
    rng = np.random.default_rng(2)
    z = rng.random((7, 7))
    z = z + z.T
    z /= z.sum()
    d = ode.rhs_k1(z, LAM, MU)
    np.testing.assert_allclose(d, d.T, atol=1e-15)


def test_general_specialises_exactly():
    rng = np.random.default_rng(3)
    for _ in range(10):
        z = random_simplex(rng, (8, 8))
        assert np.array_equal(ode.rhs_general(z, 1, LAM, MU), ode.rhs_k1(z, LAM, MU))
        y = random_simplex(rng, 15)
        np.testing.assert_allclose(ode.rhs_general(y, 0, 0.5, MU), mm1_forward(y, 0.5, MU), atol=1e-15)


@pytest.mark.parametrize("k,cap", [(1, 60), (2, 25)])
def test_jsq_law_is_fixed_point(k, cap):
    p = jsq.jsq_stationary(k, LAM, MU, cap).to_dense(cap)
    assert np.max(np.abs(ode.rhs(p, LAM, MU))) <= 1e-8


def test_literal_form_gains_mass():
    # without the arrival outflow term mass is created at rate k*lam on the open box
    z = ode.OdeState.point_mass(1, 8).z
    assert ode.rhs(z, LAM, MU, literal=True).sum() == pytest.approx(LAM)


def test_literal_form_is_not_fixed_point():
    p = jsq.jsq_stationary(1, LAM, MU, 40).to_dense(40)
    assert np.max(np.abs(ode.rhs(p, LAM, MU, literal=True))) > 1e-3


def test_zero_arrivals_constant():
    traj = ode.integrate(ode.OdeState.point_mass(1, 5), 1, 0.0, MU, 5.0)
    assert all(np.array_equal(s, traj.states[0]) for s in traj.states)


def test_k0_converges_to_geometric():
    traj = ode.integrate(ode.OdeState.point_mass(0, 60), 0, 0.5, MU, 200.0)
    want = np.array([jsq.mm1_analytic(0.5, MU, n) for n in range(61)])
    assert np.max(np.abs(traj.final.z - want)) <= 1e-6
    assert traj.max_mass_error <= 1e-9
    assert traj.min_entry >= -1e-9


def test_step_halving():
    z0 = ode.OdeState.point_mass(1, 30)
    a = ode.integrate(z0, 1, LAM, MU, 10.0, 0.01).final.z
    b = ode.integrate(z0, 1, LAM, MU, 10.0, 0.005).final.z
    assert np.max(np.abs(a - b)) <= 1e-8


def test_sampling_grid():
    traj = ode.integrate(ode.OdeState.point_mass(1, 5), 1, LAM, MU, 2.0, 0.01, sample_every=0.5)
    np.testing.assert_allclose(traj.times, [0, 0.5, 1.0, 1.5, 2.0])


def test_fixed_point_matches_reference():
    fp = ode.fixed_point(1, LAM, MU, 40)
    p = jsq.jsq_stationary(1, LAM, MU, 40).to_dense(40)
    assert np.max(np.abs(fp.z - p)) <= 1e-7
    assert np.max(np.abs(fp.z - fp.z.T)) <= 1e-12
    assert fp.residual <= 1e-10


def test_fixed_point_k0_geometric():
    fp = ode.fixed_point(0, 0.5, MU, 60)
    want = np.array([jsq.mm1_analytic(0.5, MU, n) for n in range(41)])
    assert np.max(np.abs(fp.z[:41] - want)) <= 1e-8


def test_fixed_point_unstable():
    with pytest.raises(InstabilityError):
        ode.fixed_point(1, 1.0, 1.0, 10)
