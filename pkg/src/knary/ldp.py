"""Young functions, convex integral functionals on the path jump measure,
and numerical evaluation of the two rate-function representations.

``tau(u) = e^u - u - 1`` and its conjugate ``tau*(u) = (u+1) log(u+1) - u``
(``+inf`` below -1) price perturbations of the jump intensity. Given a
path ``pi`` (a ``HydroSolution``) and a kernel:

* ``r_upper_estimate`` maximises ``gamma(pi, g) - I_tau(pi, L[g])`` over a
  finite family of test functions ``g`` (a lower estimate of the
  variational rate);
* ``r_lower_given_eta`` evaluates ``int tau*(eta - 1) dK^P[pi]`` for one
  density ``eta`` under which ``pi`` solves the tilted limit equation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "tau", "tau_star", "legendre_check", "TestFunctionPath", "RateEvaluation", "PreconditionError",
    "integral_functional", "gamma_functional", "r_upper_estimate", "r_lower_given_eta",
    "bd_eta_alternative", "bd_tilted_rhs", "initial_rate",
]

INF = math.inf


class PreconditionError(ValueError):
    pass


def tau(u):
    u = np.asarray(u, dtype=float)
    return np.expm1(u) - u


def tau_star(u):
    """Conjugate of ``tau``; ``tau*(-1) = 1`` and ``+inf`` for ``u < -1``."""
    u = np.asarray(u, dtype=float)
    v = u + 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)) - u, np.inf)
    out = np.where(v == 0, 1.0, out)
    return out if out.ndim else float(out)


def legendre_check(u_grid, iters: int = 200) -> float:
    """Max over the grid of ``|tau*(u) - sup_y (u y - tau(y))|``.

    The supremum is found by Newton iteration on the first-order condition
    ``e^y - 1 = u`` started from ``y = u``, which approaches the maximiser
    monotonically from above.
    """
    u = np.asarray(u_grid, dtype=float)
    if np.any(u <= -1):
        raise ValueError("grid must lie in (-1, inf)")
    y = u.copy()
    for _ in range(iters):
        step = 1.0 - (1.0 + u) * np.exp(-y)
        y = y - step
        if np.max(np.abs(step)) < 1e-16:
            break
    sup = u * y - tau(y)
    return float(np.max(np.abs(tau_star(u) - sup)))


# --- test-function paths --------------------------------------------------------

class TestFunctionPath:
    """``g(t, x) = sum_b c_b(t) phi_b(x)`` with ``c_b`` piecewise linear in time.

    ``basis`` is a list of vectorised functions ``x -> array``;
    ``coefficients`` has one row per knot.
    """

    __test__ = False

    def __init__(self, basis: Sequence[Callable], time_knots, coefficients=None):
        self.basis = list(basis)
        self.knots = np.asarray(time_knots, dtype=float)
        if self.knots.ndim != 1 or self.knots.size < 1 or np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        shape = (self.knots.size, len(self.basis))
        self.coefficients = np.zeros(shape) if coefficients is None else np.asarray(coefficients, dtype=float)
        if self.coefficients.shape != shape:
            raise ValueError(f"coefficients must have shape {shape}")

    def hat(self, t):
        """Interpolation weights of each knot at times ``t`` (rows)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        K = self.knots.size
        if K == 1:
            return np.ones((t.size, 1))
        eye = np.eye(K)
        return np.stack([np.interp(t, self.knots, eye[k]) for k in range(K)], axis=1)

    def hat_slope(self, t):
        """Time derivative of the interpolation weights (right-continuous)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        K = self.knots.size
        out = np.zeros((t.size, K))
        if K == 1:
            return out
        seg = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, K - 2)
        d = 1.0 / np.diff(self.knots)
        out[np.arange(t.size), seg] = -d[seg]
        out[np.arange(t.size), seg + 1] = d[seg]
        return out

    def coef(self, t):
        return self.hat(t) @ self.coefficients

    def basis_values(self, x):
        x = np.asarray(x)
        return np.stack([np.broadcast_to(np.asarray(phi(x), dtype=float), x.shape) for phi in self.basis], axis=-1) \
            if self.basis else np.zeros(x.shape + (0,))

    def __call__(self, t, x):
        x = np.asarray(x)
        if not self.basis:
            return np.zeros(x.shape)
        c = self.coef(np.ravel(t)) if np.ndim(t) else self.coef(t)[0]
        phi = self.basis_values(x)
        if np.ndim(t) == 0:
            return phi @ c
        c = c.reshape(np.shape(t) + (len(self.basis),))
        return np.sum(phi * c, axis=-1)

    def derivative(self, t, x):
        x = np.asarray(x)
        if not self.basis:
            return np.zeros(x.shape)
        dc = (self.hat_slope(np.ravel(t)) @ self.coefficients)
        phi = self.basis_values(x)
        if np.ndim(t) == 0:
            return phi @ dc[0]
        dc = dc.reshape(np.shape(t) + (len(self.basis),))
        return np.sum(phi * dc, axis=-1)

    def bound(self, support=None) -> float:
        if not self.basis:
            return 0.0
        if support is None:
            return float(np.abs(self.coefficients).sum())
        return float(np.max(np.abs(self.basis_values(support) @ self.coefficients.T)))

    def as_test_function(self, support=None):
        from .measures import TestFunction
        return TestFunction(self.__call__, self.bound(support) + 1e-12, self.derivative,
                            time_dependent=self.knots.size > 1, name="g")

    def with_coefficients(self, coefficients):
        return TestFunctionPath(self.basis, self.knots, coefficients)


@dataclass
class RateEvaluation:
    value: float
    kind: str  # "upper_estimate" | "lower_exact_given_eta" | "f_tilt_closed_form"
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.value >= -1e-12:
            raise ValueError(f"rate value {self.value} is negative")

    def to_record(self) -> dict:
        return {"value": self.value, "kind": self.kind, "diagnostics": self.diagnostics}


# --- functionals ----------------------------------------------------------------

def integral_functional(pi, kern, phi, f) -> float:
    """``I_phi(pi, f) = <phi(f), K^P[pi]>`` with ``phi`` in ``{tau, tau_star}``."""
    from .hydro import path_jump_integral
    from .kernels import as_jump_function

    f = as_jump_function(f)
    if f is None:
        return 0.0
    return path_jump_integral(pi, kern, f.map(phi))


def _discrete_check(pi, kern):
    from .kernels import CountKernel
    if not isinstance(kern, CountKernel):
        raise TypeError("rate functionals are implemented for count kernels")


def gamma_functional(pi, kern, g: TestFunctionPath) -> float:
    """``<pi_T, g_T> - <pi_0, g_0> - int <pi_s, dg_s> ds - <L[g], K^P[pi]>``.

    Time integrals use the trapezoidal rule on ``pi.grid``; knots of ``g``
    should lie on that grid so that ``dg`` is constant between grid points.
    """
    from .hydro import path_jump_integral
    from .kernels import increment

    if not g.basis:
        return 0.0
    x = pi.support
    ends = float(np.dot(g(pi.T, x), pi.states[-1]) - np.dot(g(0.0, x), pi.states[0]))
    # dg is piecewise constant: integrate on each grid cell with its midpoint slope
    mid = 0.5 * (pi.grid[1:] + pi.grid[:-1])
    dc = g.hat_slope(mid) @ g.coefficients            # (M, B)
    pb = pi.states @ g.basis_values(x)                # (M+1, B)
    cell = 0.5 * (pb[1:] + pb[:-1]) * np.diff(pi.grid)[:, None]
    dterm = float(np.sum(dc * cell))
    # jumps may touch species just outside the support (and the zero pad)
    gtf = g.as_test_function(np.arange(0, 2 * int(x[-1]) + 2))
    return ends - dterm - path_jump_integral(pi, kern, increment(gtf))


class _RateObjective:
    """``theta -> gamma(pi, g_theta) - I_tau(pi, L[g_theta])`` with all
    path quantities precomputed; ``theta`` has shape (knots, basis)."""

    def __init__(self, pi, kern, path: TestFunctionPath):
        from .hydro import channel_weights
        from .kernels import masked_sum

        self.shape = path.coefficients.shape
        st, W = channel_weights(pi, kern)
        dt = np.diff(pi.grid)
        tw = np.zeros(pi.grid.size)
        tw[:-1] += dt / 2
        tw[1:] += dt / 2
        self.W = W * tw[:, None]                         # trapezoid weights folded in
        J = st.jumps
        Lb = np.stack([masked_sum(lambda t, x, phi=phi: np.asarray(phi(x), float), 0.0, J.products, J.product_mask)
                       - masked_sum(lambda t, x, phi=phi: np.asarray(phi(x), float), 0.0, J.reactants, J.reactant_mask)
                       for phi in path.basis], axis=1) if path.basis else np.zeros((len(J), 0))
        self.Lb = Lb                                     # (C, B)
        self.H = path.hat(pi.grid)                       # (M+1, K)
        # linear part: gamma without the jump term plus the jump term
        x = pi.support
        phi = path.basis_values(x)
        pb = pi.states @ phi                             # (M+1, B)
        Hs = path.hat_slope(0.5 * (pi.grid[1:] + pi.grid[:-1]))
        cell = 0.5 * (pb[1:] + pb[:-1]) * dt[:, None]
        G = np.outer(self.H[-1], pb[-1]) - np.outer(self.H[0], pb[0]) - Hs.T @ cell
        G -= self.H.T @ (self.W @ Lb)                    # <L[g], K^P[pi]>
        self.G = G
        # rows touched by each knot (support of its hat function)
        self.rows = [np.flatnonzero(self.H[:, k]) for k in range(self.shape[0])]
        self.theta = np.zeros(self.shape)
        self.L = np.zeros(self.W.shape)

    def set(self, theta):
        self.theta = np.array(theta, dtype=float)
        self.L = self.H @ self.theta @ self.Lb.T

    def value(self):
        return float(np.sum(self.G * self.theta) - np.sum(tau(self.L) * self.W))

    def line(self, k, b):
        """Concave 1-D objective ``s -> value(theta + s e_kb) - value(theta)``."""
        rows = self.rows[k]
        L0 = self.L[rows]
        W = self.W[rows]
        dL = np.outer(self.H[rows, k], self.Lb[:, b])
        base = float(np.sum(tau(L0) * W))
        Gkb = self.G[k, b]

        def phi(s):
            return Gkb * s - (float(np.sum(tau(L0 + s * dL) * W)) - base)

        return phi

    def direction(self, d):
        """Concave 1-D objective along a full coefficient direction ``d``."""
        dL = self.H @ d @ self.Lb.T
        L0 = self.L.copy()
        base = float(np.sum(tau(L0) * self.W))
        gd = float(np.sum(self.G * d))

        def phi(s):
            return gd * s - (float(np.sum(tau(L0 + s * dL) * self.W)) - base)

        return phi, dL

    def move(self, k, b, s):
        self.theta[k, b] += s
        rows = self.rows[k]
        self.L[rows] += s * np.outer(self.H[rows, k], self.Lb[:, b])


_GOLD = (math.sqrt(5) - 1) / 2


def _golden_max(phi, tol=1e-10, step=0.25, max_expand=60):
    """Maximise a concave function of one variable; returns ``(s, phi(s))``."""
    f0 = phi(0.0)
    fr, fl = phi(step), phi(-step)
    if fr <= f0 and fl <= f0:
        a, b = -step, step
    else:
        sign = 1.0 if fr > fl else -1.0
        prev, cur, fcur = 0.0, sign * step, max(fr, fl)
        d = step
        for _ in range(max_expand):
            d *= 2
            nxt = cur + sign * d
            fn = phi(nxt)
            if fn <= fcur:
                break
            prev, cur, fcur = cur, nxt, fn
        a, b = sorted((prev, cur + sign * d))
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc, fd = phi(c), phi(d)
    while b - a > tol * (1 + abs(a) + abs(b)):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = phi(d)
    s = 0.5 * (a + b)
    fs = phi(s)
    if fs < f0:
        return 0.0, f0
    return s, fs


def r_upper_estimate(pi, kern, basis: Sequence[Callable], time_knots=None, restarts: int = 5,
                     max_sweeps: int = 500, tol: float = 1e-10, seed: int = 0,
                     init_scale: float = 0.5) -> RateEvaluation:
    """Lower estimate of the variational rate by coordinate ascent.

    Maximises ``gamma(pi, g) - I_tau(pi, L[g])`` over test-function paths
    spanned by ``basis`` with piecewise-linear coefficients on
    ``time_knots`` (default: the two end points). Each restart begins from
    random coefficients (the first from zero) and sweeps all coordinates
    with a golden-section line search, followed by a line search along the
    sweep's net displacement, until a sweep gains less than ``tol``.
    """
    _discrete_check(pi, kern)
    if time_knots is None:
        time_knots = [pi.grid[0], pi.grid[-1]]
    path = TestFunctionPath(basis, time_knots)
    if not path.basis:
        return RateEvaluation(0.0, "upper_estimate", {"restarts": 0, "trace": []})
    obj = _RateObjective(pi, kern, path)
    rng = np.random.default_rng(seed)
    best, best_theta, trace = -math.inf, None, []
    for r in range(max(1, restarts)):
        theta0 = np.zeros(obj.shape) if r == 0 else rng.normal(0.0, init_scale, obj.shape)
        obj.set(theta0)
        val = obj.value()
        run = [val]
        for sweep in range(max_sweeps):
            old = val
            start = obj.theta.copy()
            for k in range(obj.shape[0]):
                for b in range(obj.shape[1]):
                    s, gain = _golden_max(obj.line(k, b))
                    if s != 0.0:
                        obj.move(k, b, s)
            # pattern move along the net displacement of the sweep
            d = obj.theta - start
            if np.any(d):
                phi, dL = obj.direction(d)
                s, gain = _golden_max(phi, step=1.0)
                if s != 0.0:
                    obj.theta += s * d
                    obj.L += s * dL
            val = obj.value()
            run.append(val)
            if val - old < tol * max(1.0, abs(val)):
                break
        trace.append({"restart": r, "value": val, "sweeps": len(run) - 1, "converged": len(run) - 1 < max_sweeps})
        if val > best:
            best, best_theta = val, obj.theta.copy()
    return RateEvaluation(max(best, 0.0), "upper_estimate",
                          {"trace": trace, "theta": best_theta.tolist(), "basis_size": len(path.basis),
                           "knots": path.knots.tolist()})


def r_lower_given_eta(pi, kern, eta, check: bool = True, tol: float = 1e-5, battery: int = 8) -> RateEvaluation:
    """``int tau*(eta - 1) dK^P[pi]`` for a density under which ``pi`` solves
    the tilted limit equation (checked on species indicators by the
    weak-form residual, tolerance ``tol``)."""
    from .hydro import path_jump_integral, weak_form_residual
    from .kernels import tilt_eta
    from .measures import TestFunction

    worst = 0.0
    if check:
        tilted = tilt_eta(kern, eta)
        for s in range(1, min(battery, pi.n_max) + 1):
            g = TestFunction(lambda t, x, s=s: (np.asarray(x) == s).astype(float), 1.0, name=f"1{{{s}}}")
            worst = max(worst, abs(weak_form_residual(pi, tilted, g)))
        if worst > tol:
            raise PreconditionError(f"path does not solve the tilted equation (residual {worst:.3g})")
    val = path_jump_integral(pi, kern, eta.map(lambda e: tau_star(e - 1.0), "tau*(eta-1)"))
    return RateEvaluation(val, "lower_exact_given_eta", {"residual": worst})


def bd_eta_alternative(eta, pi, k: int, kern):
    """Second density giving the same tilted Becker-Doring flux as ``eta``.

    Adds ``pi_{k+1}(t)`` to the coagulation rate of ``{k,1}`` and
    ``pi_k(t) pi_1(t)`` to the fragmentation rate of ``{k+1}``; the extra
    coagulation and fragmentation fluxes cancel in the limit equation.
    """
    from .kernels import COAG, FRAG, TiltFunction

    if k < 2:
        raise ValueError("k must be at least 2")
    base = kern.base
    a_k = float(base.a(np.array([k]))[0])
    b_k1 = float(base.b(np.array([k + 1]))[0])
    if a_k <= 0 or b_k1 <= 0:
        raise ValueError("rates a_k and b_{k+1} must be positive")

    def extra(t, J):
        top = J.reactants.max(axis=1)
        coag = (J.kind == COAG) & (top == k) & (J.n_reactants == 2)
        frag = (J.kind == FRAG) & (top == k + 1)
        t_arr = np.broadcast_to(np.asarray(t, dtype=float), (len(J),))
        out = np.zeros(len(J))
        for i in np.flatnonzero(coag | frag):
            c = pi.at(t_arr[i])
            pk1 = c[k] if c.size > k else 0.0
            out[i] = pk1 / a_k if coag[i] else c[k - 1] * c[0] / b_k1
        return out

    def fn(t, J):
        return eta(t, J) + extra(t, J)

    mx = float(np.max(pi.states)) if pi.states.size else 0.0
    bound = None if eta.declared_bound is None else eta.declared_bound + max(mx / a_k, mx * mx / b_k1)
    return TiltFunction(fn, bound, True, f"{eta.name}+alt({k})")


def bd_tilted_rhs(kern, eta, t: float, c) -> np.ndarray:
    """Right-hand side of the Becker-Doring limit equation under ``eta``."""
    from .kernels import multiplicity, tilt_eta

    tk = tilt_eta(kern, eta)
    c = np.asarray(c, dtype=float)
    st = tk.structure(c.size)
    w = tk.rates(t, st) * multiplicity(st, np.concatenate([[0.0], c]), "tensor")
    return st.stoich[:, 1:].T @ w


def initial_rate(pi0, nu, mode: str = "chaotic") -> float:
    """Rate of the initial condition on a discrete support.

    ``pi0`` and ``nu`` map atoms to masses. Deterministic mode: 0 if
    ``pi0 == nu`` (to 1e-12 per atom) else ``inf``. Chaotic mode: relative
    entropy ``H(pi0 | nu)``.
    """
    atoms = set(pi0) | set(nu)
    if mode == "deterministic":
        return 0.0 if all(abs(pi0.get(a, 0.0) - nu.get(a, 0.0)) <= 1e-12 for a in atoms) else INF
    if mode != "chaotic":
        raise ValueError(f"unknown mode {mode!r}")
    total = 0.0
    for a in atoms:
        p = pi0.get(a, 0.0)
        if p <= 0:
            continue
        q = nu.get(a, 0.0)
        if q <= 0:
            return INF
        total += p * math.log(p / q)
    return total
