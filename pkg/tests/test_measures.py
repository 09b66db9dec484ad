"""Multisets, kappa measures, tensor powers and Young-scheme checks."""
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from knary import (
    BoundViolation, ConsistencyError, EmpiricalMeasure, SystemState, TestFunction, kappa_enumerate,
    kappa_integrate, tensor_power_integrate, young_decompose_check, young_gap,
)


def sym_f(seed):
    """A random symmetric nonnegative function of a tuple of species."""
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.1, 2.0, 16)
    return lambda z: float(np.prod([w[int(v) % 16] for v in z]) + sum(w[int(v) % 16] for v in z) ** 2)


def test_state_canonical_and_hashable():
    a = SystemState.from_particles([3, 1, 1])
    b = SystemState.from_counts({1: 2, 3: 1})
    assert a.items == b.items == ((1, 2), (3, 1))
    assert hash(a.as_representation("counts")) == hash(b)
    assert a.particles() == (1, 1, 3)
    assert len(b) == 3


def test_kappa_examples():
    f = lambda z: 10.0 * (z[0] == z[1]) + z[0] + z[1]  # noqa: E731
    assert kappa_integrate(SystemState.from_particles([1, 2]), 2, f) == f((1, 2))
    xxy = SystemState.from_counts({1: 2, 2: 1})
    assert kappa_integrate(xxy, 2, f) == f((1, 1)) + 2 * f((1, 2))
    assert kappa_integrate(SystemState.from_particles([5]), 2, f) == 0.0
    with pytest.raises(ValueError):
        kappa_integrate(xxy, 0, f)


def test_tensor_power_examples():
    f = lambda z: float(sum(z)) ** 2 + 1  # noqa: E731
    mu = {1: 1.0, 2: 1.0}
    assert tensor_power_integrate(mu, 2, f) == pytest.approx(0.5 * (f((1, 1)) + 2 * f((1, 2)) + f((2, 2))))
    h = 0.3
    assert tensor_power_integrate({4: h}, 3, f) == pytest.approx(h ** 3 * f((4, 4, 4)) / 6)
    assert tensor_power_integrate(mu, 1, lambda z: z[0] * 3.0) == pytest.approx(9.0)


def test_young_gap_examples():
    f = lambda z: float(z[0] + z[1])  # noqa: E731
    h = 0.25
    assert young_gap(SystemState.from_particles([1, 2]), h, 2, f) == pytest.approx(h * h * (f((1, 1)) + f((2, 2))) / 2)
    assert young_gap(SystemState.from_particles([3]), h, 2, f) == pytest.approx(h * h * f((3, 3)) / 2)
    assert young_gap(SystemState.from_particles([1, 2, 2]), h, 3, lambda z: 0.0) == 0.0


def test_young_gap_flags_negative():
    # a signed f can make the gap negative; the check is only for f >= 0
    f = lambda z: -1.0 if z[0] == z[1] else 5.0  # noqa: E731
    with pytest.raises(ConsistencyError):
        young_gap(SystemState.from_particles([1, 2]), 1.0, 2, f)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=0, max_size=8), st.integers(1, 3), st.integers(0, 10 ** 6))
def test_kappa_counts_vs_enumeration(parts, ell, seed):
    f = sym_f(seed)
    s = SystemState.from_particles(parts)
    a = kappa_integrate(s.as_representation("counts"), ell, f)
    b = kappa_enumerate(s, ell, f)
    c = kappa_integrate(s.as_representation("particles"), ell, f)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)
    assert c == pytest.approx(b, rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.permutations([1, 1, 2, 3, 3, 3, 4]), st.integers(1, 3))
def test_permutation_invariance(perm, ell):
    f = sym_f(7)
    ref = SystemState.from_particles([1, 1, 2, 3, 3, 3, 4])
    s = SystemState.from_particles(perm)
    assert kappa_enumerate(s, ell, f) == kappa_enumerate(ref, ell, f)
    mu = EmpiricalMeasure(s, 0.5)
    assert tensor_power_integrate(mu, ell, f) == tensor_power_integrate(EmpiricalMeasure(ref, 0.5), ell, f)


def test_young_gap_nonnegative_random():
    rng = np.random.default_rng(1)
    for _ in range(300):
        parts = rng.integers(1, 5, rng.integers(0, 8)).tolist()
        f = sym_f(int(rng.integers(10 ** 6)))
        h = float(rng.uniform(1e-3, 1.0))
        assert young_gap(SystemState.from_particles(parts), h, int(rng.integers(2, 4)), f) >= -1e-12


def test_young_coefficients():
    d2 = young_decompose_check(SystemState.from_particles([1, 2, 3]), 2)
    assert d2.coefficient((2,)) == pytest.approx(-0.5, abs=1e-12)
    d3 = young_decompose_check(SystemState.from_particles([1, 2, 3, 4, 4]), 3)
    # independent oracle: e_3 = (p1^3 - 3 p1 p2 + 2 p3) / 6 in power sums
    assert d3.coefficient((1, 2)) == pytest.approx(-0.5, abs=1e-12)
    assert d3.coefficient((3,)) == pytest.approx(1 / 3, abs=1e-12)


def test_young_counting_identity():
    for n in range(0, 9):
        s = SystemState.from_particles(list(range(n)))
        assert kappa_integrate(s, 2, lambda z: 1.0) == n * n / 2 - n / 2 == math.comb(n, 2)


def test_young_rejects_degenerate_state():
    with pytest.raises(ValueError):
        young_decompose_check(SystemState.from_particles([1, 1]), 3)


def test_moment_pairing():
    s = SystemState.from_counts({1: 3, 4: 2})
    h = 0.125
    mu = EmpiricalMeasure(s, h)
    E = lambda x: np.asarray(x, float) ** 1.5  # noqa: E731
    assert mu.moment(E) == h * sum(1 + E(np.array([x]))[0] for x in s.particles())
    assert mu.total_mass() == 5 * h


def test_test_function_bound_and_table():
    g = TestFunction.from_table([0.0, 1.0, -2.0])
    assert g.bound == 2.0
    assert np.array_equal(g(0.0, np.array([1, 2, 7])), [1.0, -2.0, 0.0])
    bad = TestFunction(lambda t, x: 3.0 * np.ones(np.shape(x)), 1.0)
    with pytest.raises(BoundViolation):
        bad(0.0, np.array([1.0]))
    assert np.all(TestFunction.zero()(0.0, np.arange(3)) == 0)


def test_enumeration_brute_force_small():
    # kappa_enumerate against a hand-rolled subset sum
    parts = [2, 2, 5]
    f = lambda z: float(np.prod(z))  # noqa: E731
    expected = sum(f(tuple(parts[i] for i in c)) for c in itertools.combinations(range(3), 2))
    assert kappa_enumerate(SystemState.from_particles(parts), 2, f) == expected
