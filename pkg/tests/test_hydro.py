"""Limit-equation solvers, path jump integrals and the gelation horizon."""
import math

import numpy as np
import pytest

from knary import (
    COAG, EmpiricalMeasure, HydroSolution, NumericalError, SystemState, TestFunction, bd_kernel, gelation_horizon,
    kac_kernel, kind_indicator, path_jump_integral, reference_solution, sample_initial, smoluchowski_kernel,
    solve_bd, solve_kernel, solve_smoluchowski, weak_form_residual, zero_kernel,
)


def test_bd_frozen():
    n = 10
    c0 = np.linspace(1.0, 0.1, n)
    sol = solve_bd((np.zeros(n), np.zeros(n)), c0, 1.0, n)
    assert np.array_equal(sol.states[-1], c0)


def test_bd_monomer_pair_factor():
    # only a_1 = 1: J_1 = c_1^2 so c_1 = 1/(1+2t) and c_2 = (1 - c_1)/2
    n = 5
    a = np.r_[1.0, np.zeros(n - 1)]
    sol = solve_bd((a, np.zeros(n)), {1: 1.0}, 1.0, n, step=1e-3)
    t = sol.grid
    c1 = 1 / (1 + 2 * t)
    assert np.max(np.abs(sol.states[:, 0] - c1)) < 1e-10
    assert np.max(np.abs(sol.states[:, 1] - (1 - c1) / 2)) < 1e-10
    # initial slope of the dimer concentration
    assert (sol.states[1, 1] - sol.states[0, 1]) / (t[1] - t[0]) == pytest.approx(1.0, rel=1e-2)


def test_bd_mass_and_leakage():
    k = bd_kernel(1.0, 0.2, 200)
    sol = solve_bd(k, {1: 1.0}, 5.0, 5)
    assert sol.leakage[-1] > 1e-4  # the truncation is felt
    total = sol.mass() + sol.leakage
    assert np.max(np.abs(total - 1.0)) < 1e-8
    assert np.all(sol.states >= 0)


def test_bd_kernel_and_generic_solver_agree():
    k = bd_kernel(lambda i: 1 + 0.5 * np.asarray(i), 0.7, 100)
    a = solve_bd(k, {1: 1.0}, 1.0, 30)
    b = solve_kernel(k, {1: 1.0}, 1.0, 30)
    assert np.max(np.abs(a.states - b.states)) < 1e-12


def test_smoluchowski_constant_kernel_closed_form():
    one = smoluchowski_kernel(lambda x, y: np.ones(np.broadcast(x, y).shape))
    sol = solve_smoluchowski(one, {1: 1.0}, 2.0, 150)
    number = sol.states.sum(axis=1)
    assert np.max(np.abs(number - 1 / (1 + sol.grid / 2))) < 1e-9
    assert np.max(np.abs(sol.mass() + sol.leakage - 1.0)) < 1e-8


def test_smoluchowski_frozen():
    zero = smoluchowski_kernel(lambda x, y: np.zeros(np.broadcast(x, y).shape))
    sol = solve_smoluchowski(zero, {1: 0.5, 3: 0.25}, 1.0, 10)
    assert np.array_equal(sol.states[-1], sol.states[0])


def test_negative_concentration_aborts():
    k = smoluchowski_kernel(lambda x, y: 50.0 * np.ones(np.broadcast(x, y).shape))
    with pytest.raises(NumericalError):
        solve_smoluchowski(k, {1: 1.0}, 1.0, 20, step=0.25)


def test_path_jump_integral_examples():
    k = bd_kernel(1.0, 1.0, 50)
    T = 2.0
    grid = np.linspace(0, T, 21)
    states = np.zeros((21, 5))
    states[:, 0] = 1.0
    frozen = HydroSolution(grid, states, np.arange(1, 6), "frozen", 0.1)
    assert path_jump_integral(frozen, k, kind_indicator(COAG)) == pytest.approx(T)
    assert path_jump_integral(frozen, k, lambda t, J: np.zeros(len(J))) == 0.0
    assert path_jump_integral(frozen, zero_kernel()) == 0.0


def test_weak_form_residual_random_g():
    k = bd_kernel(1.0, 1.0, 100)
    sol = solve_bd(k, {1: 1.0}, 1.0, 40)
    rng = np.random.default_rng(0)
    for _ in range(20):
        tab = np.r_[0.0, rng.uniform(-1, 1, 100)]
        g = TestFunction.from_table(tab)
        assert abs(weak_form_residual(sol, k, g)) <= 1e-6 * (1 + g.bound)


def test_step_halving_order_four():
    k = bd_kernel(1.0, 1.0, 100)
    s = [solve_bd(k, {1: 1.0}, 1.0, 20, step=dt).states[-1] for dt in (0.05, 0.025, 0.0125)]
    ratio = np.max(np.abs(s[0] - s[1])) / np.max(np.abs(s[1] - s[2]))
    assert 12 <= ratio <= 20


def test_reference_solution_kac_energy():
    k = kac_kernel(1.0)
    h = 1 / 200
    init = lambda rng: sample_initial("chaotic", h, rng, nu=lambda r, n: r.normal(0, 1, n))  # noqa: E731
    ref = reference_solution(k, init, 0.5, h, replicas=4, seed=1)
    e = ref.extras["energy"]
    assert np.max(np.abs(e - e[0])) < 1e-9
    assert ref.stderr is not None and ref.states.shape == (101, 16)


def test_reference_solution_zero_and_bd():
    init = EmpiricalMeasure(SystemState.from_counts({1: 100, 2: 50}), 0.005)
    z = reference_solution(zero_kernel(), init, 1.0, 0.005, replicas=2)
    assert np.allclose(z.states, z.states[0])
    k = bd_kernel(1.0, 1.0, 100)
    init = EmpiricalMeasure(SystemState.from_counts({1: 400}), 1 / 400)
    ref = reference_solution(k, init, 0.5, 1 / 400, replicas=40, seed=2)
    sol = solve_bd(k, {1: 1.0}, 0.5, 30)
    m = ref.states[-1, :5]
    se = ref.stderr[-1, :5]
    assert np.all(np.abs(m - sol.states[-1, :5]) <= 4 * se + 2e-3)


def test_gelation_horizon_examples():
    g = gelation_horizon(1.0, (2.0, 2.0), 2, 1.0)
    assert g.C == 4.0 and g.T_star == 1 / 12
    assert g.majorant(0.0) == pytest.approx(2.0)
    assert gelation_horizon(0.0, (2.0, 2.0), 2).T_star == math.inf
    assert gelation_horizon(1e-9, (2.0, 2.0), 2).T_star > 1e7
    with pytest.raises(ValueError):
        gelation_horizon(1.0, (0.0, 2.0), 2)
    # k = 3 picks up the sum over l = 2, 3
    g3 = gelation_horizon(0.5, (1.5, 3.0), 3, 2.0)
    assert g3.C == max(3 * 0.5 * 3.0, 2 * 0.5 * (1 + 3.0))


def test_hydro_csv(tmp_path):
    sol = solve_bd(bd_kernel(1.0, 1.0, 20), {1: 1.0}, 0.1, 5, step=0.05)
    p = tmp_path / "s.csv"
    sol.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0].split(",")[:2] == ["t", "c1"] and len(lines) == 4
