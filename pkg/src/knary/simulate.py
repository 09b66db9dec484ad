"""Exact event-driven simulation of the h-scaled empirical measure process
and Monte Carlo accumulators built on its jump record.

The jump intensity at configuration ``x`` is
``h**(l-1) * P(t, z, dy) * kappa^l[x](dz)``. Time-homogeneous count kernels
are simulated with the direct Gillespie method. Tilted kernels whose
density depends on time, and all pair kernels, are simulated by thinning:
candidates are proposed at a constant majorant rate and accepted with the
ratio of the true rate to the majorant.

Random draws come from ``numpy.random.default_rng([seed, replica])``. Per
step the order is: waiting time, channel or pair, then (pair kernels)
base-rate acceptance, product draw, tilt acceptance.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kernels import (
    COLLIDE, CountKernel, JumpFunction, Jumps, KacBoltzmannKernel, Kernel, PairKernel, TiltFunction,
    TiltedCountKernel, TiltedPairKernel, as_jump_function, increment, multiplicity,
)
from .ldp import tau, tau_star
from .measures import BoundViolation, EmpiricalMeasure, SystemState, TestFunction

__all__ = [
    "ConfigurationError", "SimulationConfig", "JumpEvent", "Trajectory", "Ensemble",
    "sample_initial", "simulate", "run_ensemble", "replica_rng",
    "counting_integral", "compensator_integral", "compensated_integral", "covariance_check",
    "CovarianceResult", "exponential_martingale", "log_exponential_martingale", "f_tilt_log_rnd",
    "relative_entropy_estimate", "reweighted_expectation", "ReweightedEstimate", "write_events",
    "TrajectoryBounds", "trajectory_bounds",
]

GL_NODES = 8


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    """Scaling ``h``, horizon ``T``, seed and the explosion guard.

    ``rate_majorant``, if given, is a callable ``t -> M`` bounding the
    density of a time-dependent tilt against its base kernel on ``[t, T]``.
    Without it the tilt's declared bound is used.
    """

    h: float
    T: float
    seed: int = 0
    max_events: int = 10_000_000
    rate_majorant: Callable | None = None

    def __post_init__(self):
        if not 0 < self.h <= 1:
            raise ConfigurationError("h must lie in (0, 1]")
        if not self.T > 0:
            raise ConfigurationError("T must be positive")
        if self.max_events < 1:
            raise ConfigurationError("max_events must be >= 1")


@dataclass(frozen=True, slots=True)
class JumpEvent:
    time: float
    reactants: tuple
    products: tuple
    channel: tuple
    kind: int = 0
    slots: tuple | None = None


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(replica)])


def _gl(n=GL_NODES):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


# --- trajectories ---------------------------------------------------------------

@dataclass
class Trajectory:
    initial: EmpiricalMeasure
    events: list
    kernel_id: str
    T: float
    discrete: bool
    truncated: bool = False
    _jumps: Jumps | None = field(default=None, repr=False)

    @property
    def h(self) -> float:
        return self.initial.weight

    def __len__(self):
        return len(self.events)

    def times(self) -> np.ndarray:
        return np.fromiter((e.time for e in self.events), float, len(self.events))

    def jumps(self) -> Jumps:
        if self._jumps is None:
            dtype = np.int64 if self.discrete else float
            self._jumps = Jumps.from_tuples([e.reactants for e in self.events], [e.products for e in self.events],
                                            [e.kind for e in self.events], dtype=dtype)
        return self._jumps

    def max_species(self) -> int:
        s = max([v for v, _ in self.initial.base.items], default=1)
        for e in self.events:
            if e.products:
                s = max(s, max(e.products))
        return int(s)

    def _initial_array(self):
        if self.discrete:
            n = np.zeros(self.max_species() + 2, dtype=np.int64)
            for v, c in self.initial.base.items:
                n[int(v)] = c
            return n
        return np.array(self.initial.base.particles(), dtype=float)

    def replay(self):
        """Yield ``(t_start, t_end, state)`` for each inter-event interval.

        ``state`` is the count vector (discrete) or the particle array; it
        is updated in place between yields, so copy it to keep it.
        """
        x = self._initial_array()
        t = 0.0
        for e in self.events:
            yield t, e.time, x
            x = _apply(x, e, self.discrete)
            t = e.time
        yield t, self.T, x

    def states(self):
        """Yield the state at time 0 and after every event (in place, as ``replay``)."""
        last = None
        for _, _, x in self.replay():
            yield x
            last = x
        return last

    def final_array(self):
        x = None
        for _, _, x in self.replay():
            pass
        return x

    def _to_state(self, x) -> SystemState:
        if self.discrete:
            nz = np.flatnonzero(x)
            return SystemState.from_counts({int(i): int(x[i]) for i in nz})
        return SystemState.from_particles(x.tolist())

    def state_at(self, t: float) -> SystemState:
        for a, b, x in self.replay():
            if t < b or b >= self.T:
                return self._to_state(x)
        raise AssertionError("unreachable")

    def final_measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self._to_state(self.final_array()), self.h)

    def on_grid(self, grid) -> list | np.ndarray:
        """States at the given increasing times (copies).

        Discrete trajectories return a ``(len(grid), S+2)`` count matrix.
        """
        grid = np.asarray(grid, dtype=float)
        out = []
        k = 0
        for a, b, x in self.replay():
            while k < grid.size and (grid[k] < b or b >= self.T):
                out.append(x.copy())
                k += 1
            if k == grid.size:
                break
        if self.discrete:
            width = max(len(o) for o in out)
            return np.array([np.pad(o, (0, width - len(o))) for o in out])
        return out

    def observe(self, fn: Callable) -> np.ndarray:
        """``fn(state)`` at time 0 and after every event."""
        return np.array([fn(x) for x in self.states()])


def _apply(x, e: JumpEvent, discrete: bool):
    if discrete:
        for s in e.reactants:
            x[s] -= 1
        for s in e.products:
            if s >= len(x):
                x = np.concatenate([x, np.zeros(max(s + 2, 2 * len(x)) - len(x), dtype=x.dtype)])
            x[s] += 1
        return x
    i, j = e.slots
    if len(e.products) == 2:
        x[i], x[j] = e.products
        return x
    x[i] = e.products[0]
    return np.delete(x, j)


def write_events(traj: Trajectory, path) -> None:
    """One JSON record per event: time, channel, reactants, products."""
    with open(path, "w") as fh:
        for e in traj.events:
            fh.write(json.dumps({"time": e.time, "channel": list(e.channel), "kind": e.kind,
                                 "reactants": list(e.reactants), "products": list(e.products)}) + "\n")


@dataclass(frozen=True)
class TrajectoryBounds:
    energy_drift: float   # max_t |<E, mu_t> - <E, mu_0>|
    mass_ratio: float     # sup_t <1+E, mu_t> / <1+E, mu_0>
    c0: float
    max_count: float      # sup_t <1, mu_t>
    c_sharp: float

    @property
    def ok(self) -> bool:
        return self.mass_ratio <= self.c0 * (1 + 1e-12) and self.max_count <= self.c_sharp * (1 + 1e-12)


def trajectory_bounds(traj: Trajectory, kern: Kernel, energy_tol: float | None = None) -> TrajectoryBounds:
    """Moment bounds along one trajectory, tracked event by event.

    ``<1+E, mu_t>`` must stay below ``c0 <1+E, mu_0>`` and ``<1, mu_t>``
    below ``C#``: ``<1, mu_0>`` for 1-non-increasing kernels, otherwise
    ``<E, mu_0> / eps0`` from the dust floor. With ``energy_tol`` the
    energy drift of an energy-conserving kernel is checked too. Raises
    ``BoundViolation`` on failure.
    """
    h = traj.h
    sig = kern.signature
    vals = traj.initial.base.values().astype(float)
    mult = traj.initial.base.multiplicities().astype(float)
    n0 = h * mult.sum()
    e0 = h * float(np.dot(kern.energy(vals), mult))
    if traj.events:
        J = traj.jumps()
        dE = masked_energy(kern, J.products, J.product_mask) - masked_energy(kern, J.reactants, J.reactant_mask)
        dn = (J.n_products - J.n_reactants).astype(float)
        e_path = e0 + h * np.cumsum(dE)
        n_path = n0 + h * np.cumsum(dn)
    else:
        e_path = n_path = np.zeros(0)
    drift = float(np.max(np.abs(e_path - e0), initial=0.0))
    sup_mass = max(n0 + e0, float(np.max(n_path + e_path, initial=-np.inf)))
    sup_n = max(n0, float(np.max(n_path, initial=-np.inf)))
    if sig.one_nonincreasing:
        c_sharp = n0
    else:
        c_sharp = e0 / sig.dust_floor
    res = TrajectoryBounds(drift, float(sup_mass / (n0 + e0)), float(sig.c0), float(sup_n), float(c_sharp))
    if not res.ok:
        raise BoundViolation(f"moment bound violated: {res}")
    if energy_tol is not None and sig.e_conserving and drift > energy_tol * max(1.0, abs(e0)):
        raise BoundViolation(f"energy drift {drift:.3g} exceeds {energy_tol:g}")
    return res


def masked_energy(kern, points, mask):
    e = np.asarray(kern.energy(np.where(mask, points, 0).astype(float)), dtype=float)
    return np.where(mask, e, 0.0).sum(axis=1)


# --- initial conditions -----------------------------------------------------------

def sample_initial(mode: str, h: float, rng=None, mu0: EmpiricalMeasure | None = None, nu=None,
                   representation: str | None = None) -> EmpiricalMeasure:
    """Deterministic (``mu0`` returned verbatim) or chaotic initial measure.

    In chaotic mode ``1/h`` points are drawn i.i.d. from ``nu``, given as a
    mapping ``{value: probability}`` or a sampler ``(rng, n) -> array``.
    """
    if mode == "deterministic":
        if mu0 is None:
            raise ConfigurationError("deterministic mode needs mu0")
        return mu0
    if mode != "chaotic":
        raise ConfigurationError(f"unknown initial mode {mode!r}")
    n = round(1.0 / h)
    if n < 1 or abs(n * h - 1.0) > 1e-9:
        raise ConfigurationError("chaotic initial condition needs 1/h to be a positive integer")
    if rng is None:
        rng = np.random.default_rng()
    if callable(nu):
        pts = np.asarray(nu(rng, n))
    else:
        vals = list(nu.keys())
        p = np.asarray(list(nu.values()), dtype=float)
        pts = np.asarray(vals)[rng.choice(len(vals), size=n, p=p / p.sum())]
    if representation is None:
        representation = "counts" if np.issubdtype(pts.dtype, np.integer) else "particles"
    return EmpiricalMeasure(SystemState(pts.tolist(), representation), h)


# --- simulation ----------------------------------------------------------------------

def simulate(kern: Kernel, init: EmpiricalMeasure, cfg: SimulationConfig, replica: int = 0,
             rng: np.random.Generator | None = None) -> Trajectory:
    """One exact realisation on ``[0, cfg.T]``."""
    if abs(init.weight - cfg.h) > 1e-15 * cfg.h:
        raise ConfigurationError("initial measure weight must equal cfg.h")
    if rng is None:
        rng = replica_rng(cfg.seed, replica)
    if isinstance(kern, CountKernel):
        return _simulate_counts(kern, init, cfg, rng)
    if isinstance(kern, PairKernel):
        return _simulate_pairs(kern, init, cfg, rng)
    raise TypeError(f"unsupported kernel {type(kern).__name__}")


def _majorant(kern, cfg, t):
    if cfg.rate_majorant is not None:
        return float(cfg.rate_majorant(t))
    m = getattr(kern, "majorant", lambda: None)()
    if m is None:
        raise ConfigurationError("time-dependent kernel needs a rate majorant")
    return float(m)


def _simulate_counts(kern: CountKernel, init, cfg, rng) -> Trajectory:
    h, T = cfg.h, cfg.T
    items = init.base.items
    if any(int(v) != v or v < 1 for v, _ in items):
        raise ConfigurationError("count kernels need positive integer species")
    S = max([int(v) for v, _ in items], default=1)
    n = np.zeros(2 * S + 2, dtype=np.int64)
    for v, c in items:
        n[int(v)] = c
    thinning = kern.time_dependent
    if thinning:
        if not isinstance(kern, TiltedCountKernel) or kern.base.time_dependent:
            raise ConfigurationError("only tilts of time-homogeneous kernels may depend on time")
        rate_kern, eta = kern.base, kern.tilt
    else:
        rate_kern, eta = kern, None
    hpow = {}
    events = []
    t = 0.0
    truncated = False
    while True:
        st = rate_kern.structure(S)
        hp = hpow.get(S)
        if hp is None:
            hp = hpow[S] = h ** (st.ell - 1.0)
        r = hp * rate_kern.rates(t, st) * multiplicity(st, n)
        R = r.sum()
        if not R > 0:
            break
        if thinning:
            M = _majorant(kern, cfg, t)
            t += rng.exponential(1.0 / (M * R))
        else:
            t += rng.exponential(1.0 / R)
        if t > T:
            break
        cum = np.cumsum(r)
        c = min(int(np.searchsorted(cum, rng.uniform() * R, side="right")), len(cum) - 1)
        while r[c] <= 0:  # guard against landing on a zero-width bin at the top edge
            c -= 1
        if thinning:
            e = eta(t, st.jumps.take([c]))[0]
            if e > M * (1 + 1e-12):
                raise ConfigurationError(f"tilt {e} exceeds the thinning majorant {M}")
            if rng.uniform() * M >= e:
                continue
        z, y = st.react_tuples[c], st.prod_tuples[c]
        for s in z:
            n[s] -= 1
        for s in y:
            if s + 1 >= len(n):
                n = np.concatenate([n, np.zeros(len(n), dtype=np.int64)])
            n[s] += 1
        if y:
            S = max(S, y[-1])
        while S > 1 and n[S] == 0:
            S -= 1
        events.append(JumpEvent(t, z, y, (len(z), len(y)), int(st.jumps.kind[c])))
        if len(events) >= cfg.max_events:
            truncated = True
            break
    return Trajectory(init, events, kern.kernel_id, T, True, truncated)


def _simulate_pairs(kern: PairKernel, init, cfg, rng) -> Trajectory:
    h, T = cfg.h, cfg.T
    if isinstance(kern, TiltedPairKernel):
        base, eta = kern.base, kern.tilt
    else:
        base, eta = kern, None
    if base.time_dependent:
        raise ConfigurationError("base kernels must be time-homogeneous")
    v = np.array(init.base.particles(), dtype=float)
    B = base.rate_bound
    events = []
    t = 0.0
    truncated = False
    two = np.zeros((1, 2))
    while True:
        npart = v.size
        if npart < 2 or B <= 0:
            break
        M = 1.0 if eta is None else _majorant(kern, cfg, t)
        t += rng.exponential(1.0 / (h * B * M * npart * (npart - 1) / 2.0))
        if t > T:
            break
        i = int(rng.integers(npart))
        j = int(rng.integers(npart - 1))
        j += j >= i
        a, b = v[i], v[j]
        p = base.pair_rate(t, np.array([a]), np.array([b]))[0]
        if p < B and rng.uniform() * B >= p:
            continue
        y = tuple(float(q) for q in base.collide(t, a, b, rng))
        if eta is not None:
            two[0] = a, b
            e = eta(t, Jumps(two, np.array([y]), np.array([2]), np.array([len(y)]), np.zeros(1, np.int64)))[0]
            if e > M * (1 + 1e-12):
                raise ConfigurationError(f"tilt {e} exceeds the thinning majorant {M}")
            if rng.uniform() * M >= e:
                continue
        ev = JumpEvent(t, (float(a), float(b)), y, (2, len(y)), COLLIDE, (i, j))
        v = _apply(v, ev, False)
        events.append(ev)
        if len(events) >= cfg.max_events:
            truncated = True
            break
    return Trajectory(init, events, kern.kernel_id, T, False, truncated)


# --- ensembles ------------------------------------------------------------------------

@dataclass
class Ensemble:
    config: SimulationConfig
    replicas: int
    results: list

    def __iter__(self):
        return iter(self.results)

    def __len__(self):
        return len(self.results)


def _one_replica(kern, init, cfg, r, stat):
    rng = replica_rng(cfg.seed, r)
    mu0 = init(rng) if callable(init) else init
    traj = simulate(kern, mu0, cfg, rng=rng)
    return traj if stat is None else stat(traj)


def run_ensemble(kern: Kernel, init, cfg: SimulationConfig, replicas: int, stat: Callable | None = None,
                 workers: int = 1, first: int = 0) -> Ensemble:
    """Simulate replicas ``first .. first+replicas-1``.

    ``init`` is an ``EmpiricalMeasure`` or a callable ``rng -> EmpiricalMeasure``
    (drawn from the replica's stream before any event). With ``stat`` only
    ``stat(trajectory)`` is kept for each replica.
    """
    idx = range(first, first + replicas)
    if workers and workers > 1:
        from joblib import Parallel, delayed
        res = Parallel(n_jobs=workers)(delayed(_one_replica)(kern, init, cfg, r, stat) for r in idx)
    else:
        res = [_one_replica(kern, init, cfg, r, stat) for r in idx]
    return Ensemble(cfg, replicas, list(res))


# --- counting and compensator integrals ------------------------------------------------

def counting_integral(traj: Trajectory, f=None) -> float:
    """Sum of ``f(t, z, y)`` over the events of ``traj``."""
    f = as_jump_function(f)
    if not traj.events:
        return 0.0
    if f is None:
        return float(len(traj.events))
    return float(f(traj.times(), traj.jumps()).sum())


def compensator_integral(traj: Trajectory, kern: Kernel, f=None, n_gl: int = GL_NODES) -> float:
    """``int_0^T sum_l h**l kappa^l[mu_s/h](z -> int f P(s, z, dy)) ds``.

    The state is constant between events, so the time integral is exact for
    time-homogeneous integrands and uses ``n_gl``-point Gauss-Legendre on
    each interval otherwise.
    """
    f = as_jump_function(f)
    if traj.discrete:
        return _comp_counts(traj, kern, f, n_gl)
    return _comp_pairs(traj, kern, f, n_gl)


def _comp_counts(traj, kern: CountKernel, f, n_gl):
    h = traj.h
    td = kern.time_dependent or (f is not None and f.time_dependent)
    xq, wq = _gl(n_gl)
    cache = {}
    total = 0.0
    for a, b, n in traj.replay():
        dt = b - a
        if dt <= 0:
            continue
        nz = np.flatnonzero(n)
        S = int(nz[-1]) if nz.size else 1
        st = kern.structure(S)
        m = multiplicity(st, n) * h ** st.ell
        live = np.flatnonzero(m)
        if live.size == 0:
            continue
        if not td:
            w = cache.get(S)
            if w is None:
                w = kern.rates(0.0, st).copy()
                if f is not None:
                    w *= f(0.0, st.jumps)
                cache[S] = w
            total += dt * float(np.dot(w[live], m[live]))
        else:
            J = st.jumps.take(live)
            sub = _SubStructure(st, live)
            acc = 0.0
            for x, wgt in zip(xq, wq):
                s = a + dt * x
                r = kern.rates(s, sub) if kern.time_dependent else kern.rates(s, st)[live]
                if f is not None:
                    r = r * f(s, J)
                acc += wgt * float(np.dot(r, m[live]))
            total += dt * acc
    return total


class _SubStructure:
    """Rows ``live`` of a channel structure, enough for a time-dependent ``kern.rates``."""

    def __init__(self, st, live):
        self.support = st.support
        self.jumps = st.jumps.take(live)
        self.base_rates = st.base_rates[live]


class _PairField:
    """Symmetric matrix of pair integrals, updated row-wise after collisions."""

    def __init__(self, kern, f, v):
        self.kern, self.f = kern, f
        self.rebuild(v)

    def _row(self, v, i):
        vals = self.kern.pair_integral(0.0, np.full(v.size, v[i]), v, self.f)
        vals[i] = 0.0
        return vals

    def rebuild(self, v):
        n = v.size
        A = np.zeros((n, n))
        if n >= 2:
            iu, ju = np.triu_indices(n, 1)
            vals = self.kern.pair_integral(0.0, v[iu], v[ju], self.f)
            A[iu, ju] = vals
            A[ju, iu] = vals
        self.A = A

    def update(self, v, e: JumpEvent):
        i, j = e.slots
        if len(e.products) == 2:
            for s in (i, j):
                row = self._row(v, s)
                self.A[s, :] = row
                self.A[:, s] = row
        else:
            self.A = np.delete(np.delete(self.A, j, 0), j, 1)
            k = i if i < j else i - 1
            row = self._row(v, k)
            self.A[k, :] = row
            self.A[:, k] = row

    def total(self):
        return 0.5 * float(self.A.sum())


def _comp_pairs(traj, kern: PairKernel, f, n_gl):
    h = traj.h
    td = kern.time_dependent or (f is not None and f.time_dependent)
    total = 0.0
    if not td and f is None and isinstance(kern, KacBoltzmannKernel):
        for a, b, v in traj.replay():
            total += (b - a) * kern.lam * v.size * (v.size - 1) / 2.0
        return h * h * total
    if not td:
        x = traj._initial_array()
        field_ = _PairField(kern, f, x)
        t = 0.0
        for e in traj.events:
            total += (e.time - t) * field_.total()
            x = _apply(x, e, False)
            field_.update(x, e)
            t = e.time
        total += (traj.T - t) * field_.total()
        return h * h * total
    xq, wq = _gl(n_gl)
    for a, b, v in traj.replay():
        if b <= a or v.size < 2:
            continue
        iu, ju = np.triu_indices(v.size, 1)
        acc = 0.0
        for x, wgt in zip(xq, wq):
            acc += wgt * float(kern.pair_integral(a + (b - a) * x, v[iu], v[ju], f).sum())
        total += (b - a) * acc
    return h * h * total


def compensated_integral(traj: Trajectory, kern: Kernel, f=None) -> float:
    """Integral of ``f`` against the compensated measure ``N - kappa/h``."""
    return counting_integral(traj, f) - compensator_integral(traj, kern, f) / traj.h


@dataclass(frozen=True)
class CovarianceResult:
    z: float
    mean: float
    stderr: float
    variance_ratio: float  # Var(N~(U1)) / (h^-1 E kappa(U1)); meaningful when U1 == U2
    replicas: int


def covariance_check(trajectories: Sequence[Trajectory], kern: Kernel, U1, U2) -> CovarianceResult:
    """Test ``E[N~(U1) N~(U2)] = h^-1 E[kappa(U1 & U2)]`` over replicas.

    ``U1`` and ``U2`` are jump-set indicators (``JumpFunction``, or ``None``
    for all jumps); the statistic is the z-score of the replica mean of
    ``N~(U1) N~(U2) - kappa(U1 & U2)/h``.
    """
    U1 = JumpFunction.constant(1.0) if U1 is None else as_jump_function(U1)
    U2 = JumpFunction.constant(1.0) if U2 is None else as_jump_function(U2)
    both = U1 * U2
    prod, inter, n1 = [], [], []
    for tr in trajectories:
        a = compensated_integral(tr, kern, U1)
        b = a if U2 is U1 else compensated_integral(tr, kern, U2)
        k = compensator_integral(tr, kern, both) / tr.h
        prod.append(a * b)
        inter.append(k)
        n1.append(a)
    prod, inter, n1 = map(np.asarray, (prod, inter, n1))
    d = prod - inter
    R = d.size
    se = d.std(ddof=1) / math.sqrt(R) if R > 1 else math.inf
    z = float(d.mean() / se) if se > 0 else (0.0 if d.mean() == 0 else math.inf)
    ratio = float(np.var(n1, ddof=1) / inter.mean()) if inter.mean() > 0 else math.nan
    return CovarianceResult(z, float(d.mean()), float(se), ratio, R)


# --- change of measure --------------------------------------------------------------------

def log_exponential_martingale(traj: Trajectory, base: Kernel, tilted: Kernel, eta: TiltFunction) -> float:
    """``log M_T``; ``-inf`` if a realised jump has ``eta = 0``."""
    s = 0.0
    if traj.events:
        e = eta(traj.times(), traj.jumps())
        if np.any(e <= 0):
            return -math.inf
        s = float(np.log(e).sum())
    return s - (compensator_integral(traj, tilted) - compensator_integral(traj, base)) / traj.h


def exponential_martingale(traj: Trajectory, base: Kernel, tilted: Kernel, eta: TiltFunction) -> float:
    """``M_T = exp{sum log eta - (kappa^{h,P'} - kappa^{h,P}) / h}``.

    Returns exactly 0.0 when a realised jump has zero density.
    """
    lm = log_exponential_martingale(traj, base, tilted, eta)
    return 0.0 if lm == -math.inf else math.exp(lm)


def f_tilt_log_rnd(traj: Trajectory, kern: Kernel, f: TestFunction, n_gl: int = GL_NODES) -> float:
    """Log density of the f-tilted law against ``kern``'s law on ``traj``,
    written through ``<f, mu>`` at the end points, the time derivative of
    ``f``, the generator term and the ``tau`` correction."""
    h = traj.h
    x0 = traj._initial_array()
    xT = traj.final_array()
    ends = _sum_f(f, traj.T, xT, traj.discrete) - _sum_f(f, 0.0, x0, traj.discrete)
    dterm = 0.0
    if f.time_derivative is not None:
        xq, wq = _gl(n_gl)
        for a, b, x in traj.replay():
            if b > a:
                dterm += (b - a) * sum(w * _sum_f(f.derivative, a + (b - a) * q, x, traj.discrete)
                                       for q, w in zip(xq, wq))
    L = increment(f)
    gen = compensator_integral(traj, kern, L, n_gl) / h
    corr = compensator_integral(traj, kern, L.map(tau, "tau(L[f])"), n_gl) / h
    return ends - dterm - gen - corr


def _sum_f(g, t, x, discrete):
    if discrete:
        idx = np.flatnonzero(x)
        return float(np.dot(g(t, idx), x[idx])) if idx.size else 0.0
    return float(np.sum(g(t, x))) if x.size else 0.0


def relative_entropy_estimate(trajectories: Sequence[Trajectory], base: Kernel, eta: TiltFunction):
    """Mean and standard error of ``int tau*(eta - 1) d kappa^{h,P}`` over
    trajectories simulated under the tilted kernel (``h`` times the
    relative entropy of the tilted law)."""
    g = eta.map(lambda e: tau_star(e - 1.0), "tau*(eta-1)")
    vals = np.array([compensator_integral(tr, base, g) for tr in trajectories])
    se = vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else math.nan
    return float(vals.mean()), float(se)


@dataclass(frozen=True)
class ReweightedEstimate:
    value: float
    stderr: float
    ess: float
    low_ess: bool


def reweighted_expectation(observables, weights) -> ReweightedEstimate:
    """``sum w_r obs_r / R`` with its standard error and effective sample size."""
    obs = np.asarray(observables, dtype=float)
    w = np.asarray(weights, dtype=float)
    if obs.shape != w.shape:
        raise ValueError("observables and weights must align")
    R = w.size
    prod = w * obs
    se = prod.std(ddof=1) / math.sqrt(R) if R > 1 else math.nan
    ess = float(w.sum() ** 2 / np.sum(w * w)) if np.any(w) else 0.0
    return ReweightedEstimate(float(prod.mean()), float(se), ess, ess < 10)
