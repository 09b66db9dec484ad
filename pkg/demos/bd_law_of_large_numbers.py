"""Becker-Doring from monomers: particle system against its limit equation.

Runs a handful of replicas at three values of h and prints the monomer and
dimer concentrations at t = 1 next to the RK4 solution, then the mean
sup-distance over species 1..8.

    python demos/bd_law_of_large_numbers.py
"""
import numpy as np

from knary import EmpiricalMeasure, SimulationConfig, SystemState, bd_kernel, run_ensemble, solve_bd

T = 1.0
kern = bd_kernel(1.0, 1.0, 200)
sol = solve_bd(kern, {1: 1.0}, T, 40)
grid = np.linspace(0, T, 51)
ref = np.array([sol.at(t)[:8] for t in grid])
print(f"limit at t={T}: c1 = {sol.states[-1, 0]:.5f}, c2 = {sol.states[-1, 1]:.5f}")

for n in (50, 200, 800):
    h = 1 / n
    init = EmpiricalMeasure(SystemState.from_counts({1: n}), h)

    def stat(tr):
        c = h * tr.on_grid(grid)[:, 1:9]
        c = np.pad(c, ((0, 0), (0, 8 - c.shape[1])))
        return c[-1, 0], c[-1, 1], np.abs(c - ref).max()

    res = np.array(run_ensemble(kern, init, SimulationConfig(h, T, seed=n), 20, stat).results)
    print(f"N = {n:4d}: c1 = {res[:, 0].mean():.5f}, c2 = {res[:, 1].mean():.5f}, "
          f"mean sup error = {res[:, 2].mean():.4f}")
# the error column should shrink roughly like sqrt(h), halving each time N grows fourfold
