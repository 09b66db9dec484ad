"""Deterministic limit equations: truncated Becker-Doring and Smoluchowski
systems, a generic solver for any count kernel, Monte Carlo references
for kernels without one, quadrature of the path jump measure ``K^P[pi]``
and the pre-gelation horizon.

All solvers use classical fixed-step RK4 on species ``1..n_max``. Jumps
whose products leave the truncated range remove their energy from the
system; the lost amount is integrated alongside the concentrations and
reported as ``leakage``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernels import (
    COAG, FRAG, BeckerDoringKernel, CountKernel, JumpFunction, Kernel, PairKernel, SmoluchowskiKernel,
    TiltedCountKernel, as_jump_function, increment, multiplicity,
)
from .measures import TestFunction

__all__ = [
    "NumericalError", "HydroSolution", "GelationBound", "rk4", "solve_bd", "solve_smoluchowski",
    "solve_kernel", "bd_rate_functions", "reference_solution", "path_jump_integral", "weak_form_residual",
    "gelation_horizon",
]

NEG_TOL = 1e-10


class NumericalError(RuntimeError):
    pass


@dataclass
class HydroSolution:
    """Concentrations ``states[m, j]`` of ``support[j]`` at ``grid[m]``."""

    grid: np.ndarray
    states: np.ndarray
    support: np.ndarray
    kernel_id: str
    step: float
    leakage: np.ndarray | None = None
    stderr: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def T(self):
        return float(self.grid[-1])

    @property
    def n_max(self):
        return int(self.support[-1])

    def padded(self) -> np.ndarray:
        """States indexed by species label (column 0 unused); integer supports only."""
        out = np.zeros((self.grid.size, self.n_max + 1))
        out[:, self.support.astype(int)] = self.states
        return out

    def at(self, t) -> np.ndarray:
        """Linear interpolation in time of the concentration vector."""
        t = float(np.clip(t, self.grid[0], self.grid[-1]))
        k = int(np.searchsorted(self.grid, t, side="right")) - 1
        k = min(max(k, 0), self.grid.size - 2)
        a, b = self.grid[k], self.grid[k + 1]
        lam = (t - a) / (b - a)
        return (1 - lam) * self.states[k] + lam * self.states[k + 1]

    def pair(self, g: Callable, index: int = -1) -> float:
        """``<g, pi_t>`` at grid index ``index`` for ``g(t, x)``."""
        return float(np.dot(g(self.grid[index], self.support), self.states[index]))

    def pair_path(self, g: Callable) -> np.ndarray:
        return np.array([np.dot(g(t, self.support), s) for t, s in zip(self.grid, self.states)])

    def mass(self) -> np.ndarray:
        return self.states @ self.support

    def to_csv(self, path, every: int = 1) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"c{s:g}" for s in self.support] + ["leakage"])
            leak = self.leakage if self.leakage is not None else np.zeros(self.grid.size)
            for m in range(0, self.grid.size, every):
                w.writerow([f"{self.grid[m]:.17g}"] + [f"{x:.17g}" for x in self.states[m]] + [f"{leak[m]:.17g}"])


def rk4(rhs: Callable, y0, T: float, step: float, check: Callable | None = None):
    """Classical RK4 with a fixed number of steps ``round(T/step)``."""
    M = max(1, int(round(T / step)))
    dt = T / M
    y = np.array(y0, dtype=float)
    out = np.empty((M + 1, y.size))
    out[0] = y
    t = 0.0
    for m in range(M):
        k1 = rhs(t, y)
        k2 = rhs(t + dt / 2, y + dt / 2 * k1)
        k3 = rhs(t + dt / 2, y + dt / 2 * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = (m + 1) * dt
        out[m + 1] = y
        if check is not None:
            check(t, y)
    return np.linspace(0.0, T, M + 1), out, dt


def _nonneg_check(n):
    def check(t, y):
        low = y[:n].min()
        if low < -NEG_TOL:
            raise NumericalError(f"concentration {low:.3g} < 0 at t={t:.6g}; reduce the step size")
    return check


def _as_time_fn(x, n_max, name):
    if callable(x):
        def fn(t):
            arr = np.asarray(x(t), dtype=float)
            return np.broadcast_to(arr, (n_max,)) if arr.ndim == 0 else arr[:n_max]
        return fn, True
    arr = np.asarray(x, dtype=float)
    arr = np.full(n_max, float(arr)) if arr.ndim == 0 else arr[:n_max]
    if arr.size < n_max:
        raise ValueError(f"{name} has fewer than n_max entries")
    return (lambda t: arr), False


def bd_rate_functions(kern: CountKernel, n_max: int):
    """``(a(t), b(t))`` arrays for species ``1..n_max`` of a (possibly tilted)
    Becker-Doring kernel, read off its channel rates."""
    base = kern.base
    if not isinstance(base, BeckerDoringKernel):
        raise TypeError("not a Becker-Doring kernel")
    st = kern.structure(n_max)
    kind = st.jumps.kind
    top = st.jumps.reactants.max(axis=1)
    ci = np.flatnonzero(kind == COAG)
    fi = np.flatnonzero(kind == FRAG)
    ci = ci[np.argsort(top[ci])]
    fi = fi[np.argsort(top[fi])]
    sym = np.where(top[ci] == 1, 2.0, 1.0)

    def split(t):
        r = kern.rates(t, st)
        a = r[ci] / sym
        b = np.concatenate([[0.0], r[fi]])
        return a, b

    return split


def solve_bd(params, c0, T: float, n_max: int, step: float = 1e-3) -> HydroSolution:
    """Truncated Becker-Doring system with fluxes ``J_i = a_i c_1 c_i - b_{i+1} c_{i+1}``.

    ``params`` is a Becker-Doring kernel (tilted or not) or a pair ``(a, b)``
    of rate arrays indexed from species 1, or callables ``t -> array`` for
    time-dependent rates.
    """
    if isinstance(params, CountKernel):
        split = bd_rate_functions(params, n_max)
        time_dep = params.time_dependent
        if time_dep:
            rates = split
        else:
            fixed = split(0.0)
            rates = lambda t: fixed  # noqa: E731
        kid = params.kernel_id
    else:
        a, b = params
        af, ta = _as_time_fn(a, n_max, "a")
        bf, tb = _as_time_fn(b, n_max, "b")
        rates = lambda t: (af(t), bf(t))  # noqa: E731
        kid = "becker-doring"
    c0 = _initial(c0, n_max)
    N = n_max

    def rhs(t, y):
        a, b = rates(t)
        c = y[:N]
        c1 = c[0]
        J = a[:-1] * c1 * c[:-1] - b[1:] * c[1:]
        Jout = a[-1] * c1 * c[-1]
        dc = np.zeros(N + 1)
        dc[1:N] += J
        dc[:N - 1] -= J
        dc[N - 1] -= Jout
        dc[0] -= J.sum() + Jout
        dc[N] = (N + 1) * Jout
        return dc

    grid, Y, dt = rk4(rhs, np.append(c0, 0.0), T, step, _nonneg_check(N))
    return HydroSolution(grid, Y[:, :N], np.arange(1, N + 1), kid, dt, Y[:, N])


def _initial(c0, n_max):
    if isinstance(c0, dict):
        out = np.zeros(n_max)
        for s, v in c0.items():
            out[int(s) - 1] = v
        return out
    c0 = np.asarray(c0, dtype=float)
    out = np.zeros(n_max)
    out[:min(c0.size, n_max)] = c0[:n_max]
    if np.any(c0[n_max:] != 0):
        raise ValueError("initial data extends beyond n_max")
    return out


def solve_smoluchowski(K, c0, T: float, n_max: int, step: float = 1e-3) -> HydroSolution:
    """Truncated discrete Smoluchowski equation
    ``dc_n/dt = 1/2 sum_{i+j=n} K(i,j) c_i c_j - c_n sum_j K(n,j) c_j``."""
    Kf = K.K if isinstance(K, SmoluchowskiKernel) else K
    N = n_max
    s = np.arange(1, N + 1)
    Km = np.broadcast_to(np.asarray(Kf(s[:, None], s[None, :]), dtype=float), (N, N)).copy()
    I, J = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    tot = (I + 1) + (J + 1)
    inside = tot <= N
    gi, gj = I[inside], J[inside]
    target = tot[inside] - 1
    oi, oj = I[~inside], J[~inside]
    omass = tot[~inside].astype(float)
    c0 = _initial(c0, N)

    def rhs(t, y):
        c = y[:N]
        B = Km * np.outer(c, c)
        dc = np.empty(N + 1)
        dc[:N] = 0.5 * np.bincount(target, weights=B[gi, gj], minlength=N) - c * (Km @ c)
        dc[N] = 0.5 * float(np.dot(omass, B[oi, oj]))
        return dc

    grid, Y, dt = rk4(rhs, np.append(c0, 0.0), T, step, _nonneg_check(N))
    return HydroSolution(grid, Y[:, :N], s, "smoluchowski", dt, Y[:, N])


def solve_kernel(kern: CountKernel, c0, T: float, n_max: int, step: float = 1e-3) -> HydroSolution:
    """Limit equation of an arbitrary count kernel, built from its channel list:
    ``dc/dt = sum_c (y_c - z_c) P_c(t) c^{tensor z_c}``."""
    st = kern.structure(n_max)
    D = st.stoich[:, 1:].T.copy()  # (N, C)
    leak = st.leak_mass
    N = n_max
    fixed = None if kern.time_dependent else kern.rates(0.0, st)

    def rhs(t, y):
        r = fixed if fixed is not None else kern.rates(t, st)
        w = r * multiplicity(st, np.concatenate([[0.0], y[:N]]), "tensor")
        return np.append(D @ w, float(np.dot(leak, w)))

    grid, Y, dt = rk4(rhs, np.append(_initial(c0, N), 0.0), T, step, _nonneg_check(N))
    return HydroSolution(grid, Y[:, :N], np.arange(1, N + 1), kern.kernel_id, dt, Y[:, N])


# --- path jump measure ------------------------------------------------------------

def _trapz(y, x):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def channel_weights(pi: HydroSolution, kern: CountKernel):
    """Channel structure and ``P_c(t_m) * pi_{t_m}^{tensor l}(z_c)`` on the grid."""
    st = kern.structure(pi.n_max)
    mult = multiplicity(st, pi.padded(), "tensor")
    if kern.time_dependent:
        r = np.array([kern.rates(t, st) for t in pi.grid])
    else:
        r = kern.rates(0.0, st)[None, :]
    return st, r * mult


def path_jump_integral(pi: HydroSolution, kern: Kernel, f=None) -> float:
    """``<f, K^P[pi]>`` by the trapezoidal rule on ``pi.grid``."""
    f = as_jump_function(f)
    if isinstance(kern, CountKernel):
        st, W = channel_weights(pi, kern)
        if f is None:
            vals = W.sum(axis=1)
        elif f.time_dependent:
            vals = np.array([np.dot(f(t, st.jumps), w) for t, w in zip(pi.grid, W)])
        else:
            vals = W @ f(0.0, st.jumps)
        return _trapz(vals, pi.grid)
    if isinstance(kern, PairKernel):
        x = np.asarray(pi.support, dtype=float)
        iu, ju = np.triu_indices(x.size)
        sym = np.where(iu == ju, 0.5, 1.0)
        td = kern.time_dependent or (f is not None and f.time_dependent)
        fixed = None if td else kern.pair_integral(0.0, x[iu], x[ju], f)
        vals = []
        for t, c in zip(pi.grid, pi.states):
            pv = fixed if fixed is not None else kern.pair_integral(t, x[iu], x[ju], f)
            vals.append(float(np.dot(pv, sym * c[iu] * c[ju])))
        return _trapz(np.array(vals), pi.grid)
    raise TypeError(f"unsupported kernel {type(kern).__name__}")


def _restricted(g: TestFunction, n_max: int) -> TestFunction:
    def ev(t, x):
        return np.where(np.asarray(x) <= n_max, g(t, x), 0.0)

    def dv(t, x):
        return np.where(np.asarray(x) <= n_max, g.derivative(t, x), 0.0)

    return TestFunction(ev, g.bound, dv if g.time_derivative is not None else None, g.time_dependent, g.name)


def weak_form_residual(pi: HydroSolution, kern: CountKernel, g: TestFunction) -> float:
    """``<g_T, pi_T> - <g_0, pi_0> - int <dg, pi> - <L[g], K^P[pi]>``.

    ``g`` is restricted to the truncated support so that leaked mass and
    the jumps carrying it are accounted for consistently.
    """
    gr = _restricted(g, pi.n_max)
    ends = pi.pair(gr, -1) - pi.pair(gr, 0)
    dterm = 0.0
    if g.time_derivative is not None:
        dterm = _trapz(pi.pair_path(gr.derivative), pi.grid)
    return ends - dterm - path_jump_integral(pi, kern, increment(gr))


# --- Monte Carlo reference ---------------------------------------------------------

def reference_solution(kern: Kernel, init, T: float, h_ref: float, replicas: int = 32, grid=None,
                       bins=None, seed: int = 0, workers: int = 1) -> HydroSolution:
    """Ensemble average of the particle system at small ``h_ref``.

    Count kernels give species concentrations; pair kernels give a
    histogram of particle masses over ``bins`` (edges) and, in ``extras``,
    the exact mean energy path. ``stderr`` holds the Monte Carlo error.
    """
    from .simulate import SimulationConfig, run_ensemble

    grid = np.linspace(0.0, T, 101) if grid is None else np.asarray(grid, dtype=float)
    cfg = SimulationConfig(h_ref, T, seed)
    if isinstance(kern, CountKernel):
        def stat(tr):
            return tr.h * tr.on_grid(grid)

        res = run_ensemble(kern, init, cfg, replicas, stat, workers).results
        width = max(r.shape[1] for r in res)
        arr = np.array([np.pad(r, ((0, 0), (0, width - r.shape[1]))) for r in res])[:, :, 1:]
        support = np.arange(1, arr.shape[2] + 1)
        sol = HydroSolution(grid, arr.mean(axis=0), support, kern.kernel_id, float(np.diff(grid).min()),
                            stderr=arr.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else None)
        return sol
    if bins is None:
        bins = np.linspace(-4.0, 4.0, 17)
    bins = np.asarray(bins, dtype=float)
    centers = 0.5 * (bins[1:] + bins[:-1])

    def stat(tr):
        states = tr.on_grid(grid)
        hist = np.array([np.histogram(np.clip(v, bins[0], bins[-1]), bins)[0] for v in states]) * tr.h
        energy = np.array([tr.h * np.sum(kern.energy(v)) for v in states])
        return hist, energy

    res = run_ensemble(kern, init, cfg, replicas, stat, workers).results
    H = np.array([r[0] for r in res])
    E = np.array([r[1] for r in res])
    se = H.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else None
    return HydroSolution(grid, H.mean(axis=0), centers, kern.kernel_id, float(np.diff(grid).min()), stderr=se,
                         extras={"energy": E.mean(axis=0), "bins": bins})


# --- gelation ---------------------------------------------------------------------

@dataclass(frozen=True)
class GelationBound:
    w: float
    moment1: float   # <1+E, nu>
    moment2: float   # <1+E^2, nu>
    c0: float
    k: int
    C: float
    T_star: float

    def majorant(self, t):
        """Upper bound on ``<1+E^2, sigma_t>`` for ``t < T_star``."""
        t = np.asarray(t, dtype=float)
        den = 1.0 / (self.moment2 + 1.0) - self.C * t
        with np.errstate(divide="ignore"):
            return np.where(den > 0, 1.0 / np.where(den > 0, den, 1.0) - 1.0, np.inf)


def gelation_horizon(w: float, nu_moments, k: int, c0: float = 1.0) -> GelationBound:
    """Horizon before which the second moment of the limit stays finite.

    ``nu_moments = (<1+E, nu>, <1+E^2, nu>)``; ``w`` bounds the
    ``(1+E)``-tensor norm of the kernel.
    """
    m1, m2 = (float(x) for x in nu_moments)
    if m1 <= 0 or m2 <= 0:
        raise ValueError("moments must be positive")
    if w < 0:
        raise ValueError("w must be nonnegative")
    a = m1 * c0
    C = max(k * w * a, 2 * w * sum(a ** (l - 2) / math.factorial(l - 2) for l in range(2, k + 1)))
    T_star = math.inf if C == 0 else 1.0 / ((m2 + 1.0) * C)
    return GelationBound(float(w), m1, m2, float(c0), int(k), C, T_star)
