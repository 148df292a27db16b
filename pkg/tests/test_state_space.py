from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mflab.errors import DimensionError
from mflab.state_space import (
    ProportionVector,
    make_supernode,
    rho_distance,
    sup_distance,
    total_variation,
    validate_membership,
)


def pv(d, k=1):
    return ProportionVector(d, k)


def test_membership_examples():
    assert validate_membership(pv({(0, 0): 1.0}), n=4)
    assert not validate_membership(pv({(0, 0): 0.3, (1, 0): 0.7}), n=4)
    assert not validate_membership(pv({(0, 0): 0.5, (0, 1): 0.6}))
    assert validate_membership(pv({(0, 0): 0.3, (1, 0): 0.7}))


def test_membership_accepts_fractions():
    z = pv({(0, 1): Fraction(1, 3), (1, 0): Fraction(2, 3)})
    assert validate_membership(z, n=3)
    assert not validate_membership(z, n=4)


def test_rho_examples():
    z = pv({(0, 0): 0.5, (0, 1): 0.5})
    assert rho_distance(z, z) == 0.0
    zp = pv({(0, 0): 0.5, (0, 1): 0.3, (1, 1): 0.2})
    # only (0,1) and (1,1) differ; (0,1) gives 0.2/2, (1,1) gives 0.2/2
    assert rho_distance(z, zp) == pytest.approx(0.1)


def test_rho_uses_last_coordinate_weight():
    z = pv({(5, 0): 0.4, (0, 0): 0.6})
    zp = pv({(0, 0): 1.0})
    assert rho_distance(z, zp) == pytest.approx(0.4)


def test_sup_and_tv_examples():
    a, b = pv({(0, 0): 1.0}), pv({(1, 1): 1.0})
    assert sup_distance(a, a) == 0.0
    assert sup_distance(a, b) == 1.0
    assert sup_distance(pv({(0, 0): 0.5, (0, 1): 0.5}), a) == 0.5
    assert total_variation(a, b) == 1.0


def test_k_mismatch_rejected():
    with pytest.raises(DimensionError):
        rho_distance(pv({(0,): 1.0}, k=0), pv({(0, 0): 1.0}))
    with pytest.raises(DimensionError):
        pv({(0, 0, 0): 1.0}, k=1)
    with pytest.raises(DimensionError):
        make_supernode((1, 2), k=2)
    with pytest.raises(ValueError):
        make_supernode((1, -1))


def test_json_roundtrip():
    z = pv({(2, 0): 0.25, (0, 1): 0.75})
    d = z.to_json_dict()
    assert list(d) == ["0,1", "2,0"]
    assert ProportionVector.from_json_dict(d) == z


def test_dense_roundtrip():
    z = pv({(2, 0): 0.25, (0, 1): 0.75})
    assert ProportionVector.from_dense(z.to_dense(3)) == z


keys = st.tuples(st.integers(0, 6), st.integers(0, 6))
vectors = st.dictionaries(keys, st.floats(0, 1), max_size=12).map(lambda d: pv(d))


@settings(max_examples=300, deadline=None)
@given(vectors, vectors, vectors)
def test_metric_axioms(a, b, c):
    for dist in (rho_distance, sup_distance, total_variation):
        dab = dist(a, b)
        assert dab >= 0
        assert dab == dist(b, a)
        assert dist(a, a) == 0
        assert dist(a, c) <= dab + dist(b, c) + 1e-12


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, 12),
    st.dictionaries(keys, st.floats(0, 1), max_size=8),
    st.dictionaries(st.tuples(st.integers(0, 30), st.integers(0, 30)), st.floats(0, 1), max_size=8),
    st.dictionaries(st.tuples(st.integers(0, 30), st.integers(0, 30)), st.floats(0, 1), max_size=8),
)
def test_tail_bound(level, shared, tail_a, tail_b):
    """Agreement on every u with u_k <= level bounds rho by 1/(level+1)."""
    head = {u: v for u, v in shared.items() if u[-1] <= level}
    a = {**head, **{u: v for u, v in tail_a.items() if u[-1] > level}}
    b = {**head, **{u: v for u, v in tail_b.items() if u[-1] > level}}
    assert rho_distance(pv(a), pv(b)) <= 1.0 / (level + 1) + 1e-15
