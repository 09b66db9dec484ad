"""Young functions, rate functionals and the Becker-Doring density transform."""
import math

import numpy as np
import pytest

from knary import (
    COAG, FRAG, HydroSolution, PreconditionError, TestFunction, TestFunctionPath, TiltFunction, bd_eta_alternative,
    bd_kernel, bd_tilted_rhs, gamma_functional, increment, initial_rate, integral_functional, legendre_check,
    path_jump_integral, r_lower_given_eta, r_upper_estimate, solve_bd, tau, tau_star, tilt_eta, tilt_f, zero_kernel,
)

E = math.e


def indicators(n):
    return [lambda x, s=s: (np.asarray(x) == s).astype(float) for s in range(1, n + 1)]


@pytest.fixture(scope="module")
def bd():
    return bd_kernel(1.0, 1.0, 200)


@pytest.fixture(scope="module")
def sigma(bd):
    return solve_bd(bd, {1: 1.0}, 0.5, 25)


def test_tau_values():
    assert tau(0.0) == 0.0 and tau_star(0.0) == 0.0
    assert tau_star(E - 1) == pytest.approx(1.0, abs=1e-12)
    assert tau_star(-1.0) == 1.0
    assert tau_star(-1.5) == math.inf
    assert tau(1.0) == pytest.approx(E - 2)


def test_legendre_points():
    assert legendre_check(np.array([0.0])) < 1e-12
    assert legendre_check(np.array([E - 1])) < 1e-12
    assert legendre_check(np.array([-1 + 1e-9, -1 + 1e-6])) < 1e-8


def test_convexity_and_fenchel():
    rng = np.random.default_rng(0)
    u = rng.uniform(-1, 6, (3000, 2))
    lam = rng.uniform(0, 1, 3000)
    for phi in (tau, tau_star):
        mid = phi(lam * u[:, 0] + (1 - lam) * u[:, 1])
        assert np.all(mid <= lam * phi(u[:, 0]) + (1 - lam) * phi(u[:, 1]) + 1e-12)
    g = np.linspace(-1, 5, 601)
    assert np.all(tau(g) >= 0) and np.all(tau_star(g) >= 0)
    assert np.all((tau(g) > 0) | (g == 0))
    y = rng.uniform(-4, 4, 5000)
    uu = rng.uniform(-1, 20, 5000)
    assert np.all(uu * y <= tau(y) + tau_star(uu) + 1e-12 * (1 + np.abs(uu * y)))


def test_integral_functional_examples(bd, sigma):
    assert integral_functional(sigma, bd, tau, None) == 0.0
    zero = lambda t, J: np.zeros(len(J))  # noqa: E731
    assert integral_functional(sigma, bd, tau_star, zero) == 0.0
    const = lambda t, J: np.full(len(J), E - 1)  # noqa: E731
    mass = path_jump_integral(sigma, bd)
    assert integral_functional(sigma, bd, tau_star, const) == pytest.approx(mass, rel=1e-12)
    assert integral_functional(sigma, zero_kernel(), tau, const) == 0.0


def test_gamma_functional_examples(bd, sigma):
    rng = np.random.default_rng(1)
    path = TestFunctionPath(indicators(6), [0.0, sigma.T], np.tile(rng.uniform(-1, 1, 6), (2, 1)))
    assert abs(gamma_functional(sigma, bd, path)) < 1e-6  # trapezoid error on the solver grid
    assert gamma_functional(sigma, bd, TestFunctionPath(indicators(6), [0.0, sigma.T])) == 0.0
    frozen = HydroSolution(sigma.grid, np.tile(sigma.states[0], (sigma.grid.size, 1)), sigma.support, "frozen", 0.01)
    g = path.as_test_function(np.arange(0, 60))
    expect = -path_jump_integral(frozen, bd, increment(g))
    assert gamma_functional(frozen, bd, path) == pytest.approx(expect, rel=1e-12)


def test_test_function_path_interpolation():
    p = TestFunctionPath(indicators(2), [0.0, 1.0], [[1.0, 0.0], [3.0, -2.0]])
    assert p(0.5, np.array([1, 2, 3])).tolist() == [2.0, -1.0, 0.0]
    assert p.derivative(0.25, np.array([1, 2])).tolist() == [2.0, -2.0]
    assert p.bound(np.arange(1, 4)) == 3.0
    with pytest.raises(ValueError):
        TestFunctionPath(indicators(2), [1.0, 0.0])


def test_r_upper_zero_cases(bd, sigma):
    est = r_upper_estimate(sigma, bd, indicators(4), restarts=2)
    assert 0.0 <= est.value <= 1e-4
    assert est.kind == "upper_estimate" and est.diagnostics["trace"]
    assert r_upper_estimate(sigma, bd, []).value == 0.0


def test_r_lower_examples(bd, sigma):
    one = TiltFunction.constant(1.0)
    assert r_lower_given_eta(sigma, bd, one).value == 0.0
    c = 1.5
    pc = solve_bd(tilt_eta(bd, TiltFunction.constant(c)), {1: 1.0}, 0.5, 25)
    val = r_lower_given_eta(pc, bd, TiltFunction.constant(c)).value
    assert val == pytest.approx(tau_star(c - 1) * path_jump_integral(pc, bd), rel=1e-12)
    with pytest.raises(PreconditionError):
        r_lower_given_eta(sigma, bd, TiltFunction.constant(c))


def test_r_lower_f_tilt_closed_form(bd):
    tab = np.r_[0.0, 0.3, -0.2, 0.1, np.zeros(60)]
    f = TestFunction.from_table(tab)
    tk = tilt_f(bd, f)
    pf = solve_bd(tk, {1: 1.0}, 0.5, 25)
    lo = r_lower_given_eta(pf, bd, tk.tilt).value
    closed = integral_functional(pf, bd, tau_star, increment(f).map(lambda u: np.exp(u) - 1))
    assert lo == pytest.approx(closed, rel=1e-12)


def test_bd_eta_alternative(bd):
    eta = TiltFunction.by_kind({COAG: 1.5, FRAG: 0.8})
    pi = solve_bd(tilt_eta(bd, eta), {1: 1.0}, 0.5, 25)
    rng = np.random.default_rng(2)
    for k in (2, 3, 4):
        alt = bd_eta_alternative(eta, pi, k, bd)
        for m in rng.integers(0, pi.grid.size, 5):
            t, c = pi.grid[m], pi.states[m]
            assert np.max(np.abs(bd_tilted_rhs(bd, eta, t, c) - bd_tilted_rhs(bd, alt, t, c))) <= 1e-12
    g = eta.map(lambda e: tau_star(e - 1.0))
    ga = bd_eta_alternative(eta, pi, 2, bd).map(lambda e: tau_star(e - 1.0))
    assert path_jump_integral(pi, bd, ga) != pytest.approx(path_jump_integral(pi, bd, g), rel=1e-6)
    with pytest.raises(ValueError):
        bd_eta_alternative(eta, pi, 1, bd)


def test_bd_eta_alternative_monomers_only(bd):
    eta = TiltFunction.constant(1.3)
    grid = np.linspace(0, 1, 11)
    states = np.zeros((11, 6))
    states[:, 0] = 1.0
    pi = HydroSolution(grid, states, np.arange(1, 7), "monomers", 0.1)
    alt = bd_eta_alternative(eta, pi, 3, bd)
    st = bd.structure(6)
    live = bd.rates(0.0, st) * np.array([np.prod([states[0][s - 1] for s in z]) for z in st.react_tuples]) > 0
    assert np.array_equal(alt(0.5, st.jumps)[live], eta(0.5, st.jumps)[live])


def test_initial_rate_examples():
    nu = {1: 0.5, 2: 0.5}
    assert initial_rate(nu, nu, "chaotic") == 0.0
    assert initial_rate(nu, nu, "deterministic") == 0.0
    assert initial_rate({1: 0.75, 2: 0.25}, nu, "deterministic") == math.inf
    val = initial_rate({1: 0.75, 2: 0.25}, nu, "chaotic")
    assert val == pytest.approx(0.75 * math.log(1.5) + 0.25 * math.log(0.5), abs=1e-15)
    assert val == pytest.approx(0.13081, abs=5e-6)
    assert initial_rate({3: 1.0}, nu, "chaotic") == math.inf
