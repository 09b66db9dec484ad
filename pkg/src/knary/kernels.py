"""Interaction kernels P(t, z, dy) and their perturbations.

Two families share the ``Kernel`` interface:

* ``CountKernel`` - discrete state space of positive integer species. The
  jump set restricted to species ``1..S`` is a finite list of channels
  (reactant multiset, product multiset, rate), held in a
  ``ChannelStructure`` that the simulator, the compensators and the
  deterministic solvers all reuse.
* ``PairKernel`` - continuous scalar states with binary collisions. Rates
  are bounded by ``rate_bound`` (for thinning) and product laws come with a
  deterministic quadrature rule for channel marginals.

Batches of jumps are passed around as ``Jumps`` objects: padded reactant
and product arrays plus their lengths. Functions on the jump space take
``(t, jumps)`` and return one value per row; ``t`` is a scalar or an array
with one time per row.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.interpolate import CubicSpline

from .measures import TestFunction

__all__ = [
    "COAG", "FRAG", "COLLIDE",
    "Jumps", "JumpFunction", "TiltFunction", "increment", "kind_indicator",
    "KernelSignature", "Kernel", "ChannelStructure", "multiplicity",
    "CountKernel", "BeckerDoringKernel", "SmoluchowskiKernel", "TableKernel", "TiltedCountKernel",
    "PairKernel", "KacBoltzmannKernel", "ContinuousSmoluchowskiKernel", "TiltedPairKernel",
    "bd_kernel", "smoluchowski_kernel", "kac_kernel", "table_kernel", "zero_kernel",
    "tilt_f", "tilt_eta", "cutoff", "kernel_norm_tensor", "check_conditions", "ConditionReport",
    "energy_balance",
]

COAG, FRAG = 0, 1
COLLIDE = 0


# --- jumps -------------------------------------------------------------------

@dataclass(frozen=True)
class Jumps:
    """Batch of jumps ``z -> y``; unused slots hold a zero pad value."""

    reactants: np.ndarray
    products: np.ndarray
    n_reactants: np.ndarray
    n_products: np.ndarray
    kind: np.ndarray

    def __len__(self):
        return self.n_reactants.shape[0]

    @property
    def reactant_mask(self):
        return np.arange(self.reactants.shape[1]) < self.n_reactants[:, None]

    @property
    def product_mask(self):
        return np.arange(self.products.shape[1]) < self.n_products[:, None]

    def take(self, idx):
        return Jumps(self.reactants[idx], self.products[idx], self.n_reactants[idx],
                     self.n_products[idx], self.kind[idx])

    def row(self, i):
        """Row ``i`` as ``(reactant tuple, product tuple)``."""
        z = tuple(self.reactants[i, :self.n_reactants[i]].tolist())
        y = tuple(self.products[i, :self.n_products[i]].tolist())
        return z, y

    @classmethod
    def from_tuples(cls, reactants, products, kinds=None, dtype=None):
        n = len(reactants)
        nr = np.array([len(z) for z in reactants], dtype=np.int64)
        npd = np.array([len(y) for y in products], dtype=np.int64)
        if dtype is None:
            dtype = np.int64 if all(isinstance(v, (int, np.integer)) for z in reactants for v in z) else float
        R = np.zeros((n, max(1, int(nr.max(initial=0)))), dtype=dtype)
        Y = np.zeros((n, max(1, int(npd.max(initial=0)))), dtype=dtype)
        for i, (z, y) in enumerate(zip(reactants, products)):
            R[i, :len(z)] = z
            Y[i, :len(y)] = y
        kinds = np.zeros(n, dtype=np.int64) if kinds is None else np.asarray(kinds, dtype=np.int64)
        return cls(R, Y, nr, npd, kinds)

    @classmethod
    def concat(cls, parts):
        kr = max(p.reactants.shape[1] for p in parts)
        kp = max(p.products.shape[1] for p in parts)

        def pad(a, w):
            return np.pad(a, ((0, 0), (0, w - a.shape[1])))

        return cls(np.concatenate([pad(p.reactants, kr) for p in parts]),
                   np.concatenate([pad(p.products, kp) for p in parts]),
                   np.concatenate([p.n_reactants for p in parts]),
                   np.concatenate([p.n_products for p in parts]),
                   np.concatenate([p.kind for p in parts]))


def _row_time(t):
    return t if np.ndim(t) == 0 else np.asarray(t, dtype=float)[:, None]


def masked_sum(g, t, points, mask):
    vals = np.asarray(g(_row_time(t), points), dtype=float)
    return np.where(mask, vals, 0.0).sum(axis=1)


class JumpFunction:
    """Callable ``(t, jumps) -> array`` with a time-dependence flag."""

    def __init__(self, fn: Callable, time_dependent: bool = True, name: str = ""):
        self.fn = fn
        self.time_dependent = bool(time_dependent)
        self.name = name

    def __call__(self, t, jumps: Jumps) -> np.ndarray:
        out = np.asarray(self.fn(t, jumps), dtype=float)
        return np.broadcast_to(out, (len(jumps),)).astype(float, copy=False)

    def map(self, phi: Callable, name: str = "") -> "JumpFunction":
        """Pointwise composition ``phi(self)``."""
        return JumpFunction(lambda t, J: phi(self(t, J)), self.time_dependent, name or f"phi({self.name})")

    def __mul__(self, other):
        if isinstance(other, JumpFunction):
            return JumpFunction(lambda t, J: self(t, J) * other(t, J),
                                self.time_dependent or other.time_dependent)
        return JumpFunction(lambda t, J: other * self(t, J), self.time_dependent)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, JumpFunction):
            return JumpFunction(lambda t, J: self(t, J) + other(t, J),
                                self.time_dependent or other.time_dependent)
        return JumpFunction(lambda t, J: self(t, J) + other, self.time_dependent)

    def __sub__(self, other):
        return self + (-1.0) * other if isinstance(other, JumpFunction) else self + (-other)

    @classmethod
    def constant(cls, c: float):
        return cls(lambda t, J: np.full(len(J), float(c)), False, f"{c}")


def as_jump_function(f) -> JumpFunction | None:
    if f is None or isinstance(f, JumpFunction):
        return f
    if np.isscalar(f):
        return JumpFunction.constant(f)
    return JumpFunction(f, True)


def increment(g: TestFunction) -> JumpFunction:
    """``L[g](t, z, y) = sum g_t(y) - sum g_t(z)``."""

    def fn(t, J):
        return masked_sum(g, t, J.products, J.product_mask) - masked_sum(g, t, J.reactants, J.reactant_mask)

    return JumpFunction(fn, g.time_dependent, f"L[{g.name}]")


def kind_indicator(kinds) -> JumpFunction:
    """Indicator of the channels whose kind label is in ``kinds``."""
    kinds = np.atleast_1d(kinds)
    return JumpFunction(lambda t, J: np.isin(J.kind, kinds).astype(float), False, f"1{{kind in {list(kinds)}}}")


class TiltFunction(JumpFunction):
    """Nonnegative density ``eta`` of a perturbed kernel against its base.

    ``declared_bound`` is the sup-norm used as a thinning majorant.
    ``log_increment`` is set when ``eta = exp(L[f])`` and lets kernels use
    closed forms for f-tilts.
    """

    def __init__(self, fn: Callable, declared_bound: float | None = None, time_dependent: bool = True,
                 name: str = "eta", log_increment: TestFunction | None = None):
        super().__init__(fn, time_dependent, name)
        self.declared_bound = None if declared_bound is None else float(declared_bound)
        self.log_increment = log_increment

    def __call__(self, t, jumps):
        out = super().__call__(t, jumps)
        if out.size and out.min() < 0:
            raise ValueError(f"tilt {self.name} is negative")
        if self.declared_bound is not None and out.size and out.max() > self.declared_bound * (1 + 1e-12):
            raise ValueError(f"tilt {self.name} exceeds its declared bound {self.declared_bound}")
        return out

    @classmethod
    def constant(cls, c: float):
        return cls(lambda t, J: np.full(len(J), float(c)), float(c), False, f"eta={c}")

    @classmethod
    def by_kind(cls, values: Mapping[int, float], default: float = 1.0):
        """Constant density per channel kind, e.g. ``{COAG: 2.0}``."""
        table = dict(values)

        def fn(t, J):
            out = np.full(len(J), float(default))
            for k, v in table.items():
                out[J.kind == k] = v
            return out

        bound = max([default, *table.values()])
        return cls(fn, bound, False, f"eta{table}")

    @classmethod
    def exp_increment(cls, f: TestFunction, k: int = 2):
        L = increment(f)
        return cls(lambda t, J: np.exp(L(t, J)), math.exp(2 * k * f.bound), f.time_dependent,
                   f"exp(L[{f.name}])", log_increment=f)


# --- kernel signatures --------------------------------------------------------

@dataclass(frozen=True)
class KernelSignature:
    k: int
    e_conserving: bool
    one_nonincreasing: bool
    dust_floor: float | None = None
    d: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        d = {ell: (self.k if ell == 1 else ell) for ell in range(1, self.k + 1)}
        if self.d and dict(self.d) != d:
            raise ValueError(f"product counts must be d_1 = k, d_l = l; got {dict(self.d)}")
        object.__setattr__(self, "d", d)
        if not self.one_nonincreasing and not (self.dust_floor and self.dust_floor > 0):
            raise ValueError("kernel must be 1-non-increasing or declare a positive dust floor")

    @property
    def c0(self) -> float:
        """Constant of the ``<1+E>`` propagation bound."""
        if self.one_nonincreasing:
            return 1.0
        return 1.0 + 1.0 / self.dust_floor


class Kernel:
    signature: KernelSignature
    kernel_id: str = "kernel"
    time_dependent: bool = False
    discrete: bool = True

    def energy(self, x):
        raise NotImplementedError

    def total_rate(self, t, z) -> float:
        raise NotImplementedError

    def sample_products(self, t, z, rng):
        raise NotImplementedError

    @property
    def base(self) -> "Kernel":
        return self

    @property
    def tilt(self) -> TiltFunction | None:
        return None

    def __repr__(self):
        return f"<{type(self).__name__} {self.kernel_id}>"


# --- count kernels -----------------------------------------------------------

@dataclass(frozen=True)
class ChannelStructure:
    """All channels whose reactants lie in species ``1..support``."""

    support: int
    jumps: Jumps
    react_tuples: tuple
    prod_tuples: tuple
    group_species: np.ndarray  # (C, G) species label of each distinct reactant
    group_k: np.ndarray        # (C, G) its multiplicity in the reactant multiset
    stoich: np.ndarray         # (C, S+1) net change of each species, columns 0..S (col 0 unused)
    leak_mass: np.ndarray      # (C,) energy of products beyond the support
    base_rates: np.ndarray     # (C,) time-homogeneous P(z, {y})

    def __len__(self):
        return len(self.react_tuples)

    @property
    def ell(self):
        return self.jumps.n_reactants

    @classmethod
    def build(cls, support, reactants, products, kinds, rates, energy):
        reactants = [tuple(sorted(z)) for z in reactants]
        products = [tuple(sorted(y)) for y in products]
        J = Jumps.from_tuples(reactants, products, kinds, dtype=np.int64) if reactants else Jumps(
            np.zeros((0, 1), np.int64), np.zeros((0, 1), np.int64), np.zeros(0, np.int64),
            np.zeros(0, np.int64), np.zeros(0, np.int64))
        C = len(reactants)
        G = max([len(set(z)) for z in reactants], default=1)
        gs = np.zeros((C, G), dtype=np.int64)
        gk = np.zeros((C, G), dtype=np.int64)
        stoich = np.zeros((C, support + 1))
        leak = np.zeros(C)
        for c, (z, y) in enumerate(zip(reactants, products)):
            for j, (s, k) in enumerate(sorted(Counter(z).items())):
                gs[c, j] = s
                gk[c, j] = k
                stoich[c, s] -= k
            for s in y:
                if s <= support:
                    stoich[c, s] += 1
                else:
                    leak[c] += float(energy(np.array(s)))
        return cls(support, J, tuple(reactants), tuple(products), gs, gk, stoich, leak,
                   np.asarray(rates, dtype=float))


def multiplicity(st: ChannelStructure, n, mode: str = "kappa") -> np.ndarray:
    """Reactant multiplicity of every channel.

    ``mode="kappa"``: number of sub-multisets of the count vector ``n``
    equal to the reactant multiset (product of binomials).
    ``mode="tensor"``: symmetric tensor power ``prod c_s**k_s / k_s!`` of a
    concentration vector. ``n`` is indexed by species (entry 0 unused) and
    may carry leading batch dimensions.
    """
    n = np.asarray(n, dtype=float)
    if len(st) == 0:
        return np.zeros(n.shape[:-1] + (0,))
    v = n[..., st.group_species]
    k = st.group_k
    out = np.ones(v.shape)
    for r in range(int(k.max(initial=0))):
        out *= np.where(k > r, (v - r) if mode == "kappa" else v, 1.0)
    fact = np.array([math.factorial(int(x)) for x in range(int(k.max(initial=0)) + 1)])
    out /= fact[k]
    out = np.prod(out, axis=-1)
    if mode == "kappa":
        out = np.maximum(out, 0.0)
    return out


class CountKernel(Kernel):
    """Kernel on positive integer species with finitely many channels per support."""

    discrete = True

    def __init__(self):
        self._structures = {}

    def energy(self, x):
        return np.asarray(x, dtype=float)

    def _channels(self, support):
        """Return ``(reactants, products, kinds, rates)`` for species <= support."""
        raise NotImplementedError

    def structure(self, support: int) -> ChannelStructure:
        support = max(int(support), 1)
        st = self._structures.get(support)
        if st is None:
            z, y, kinds, rates = self._channels(support)
            rates = np.asarray(rates, dtype=float)
            if rates.size and rates.min() < 0:
                raise ValueError("negative rate")
            st = ChannelStructure.build(support, z, y, kinds, rates, self.energy)
            self._structures[support] = st
        return st

    def rates(self, t, st: ChannelStructure) -> np.ndarray:
        return st.base_rates

    def total_rate(self, t, z) -> float:
        z = tuple(sorted(int(v) for v in z))
        if not z or z[0] < 1:
            return 0.0
        st = self.structure(z[-1])
        r = self.rates(t, st)
        return float(sum(r[c] for c, zz in enumerate(st.react_tuples) if zz == z))

    def product_law(self, t, z):
        z = tuple(sorted(int(v) for v in z))
        st = self.structure(z[-1])
        r = self.rates(t, st)
        return [(st.prod_tuples[c], r[c]) for c, zz in enumerate(st.react_tuples) if zz == z and r[c] > 0]

    def sample_products(self, t, z, rng):
        law = self.product_law(t, z)
        if not law:
            raise ValueError(f"no channel out of {z}")
        w = np.array([r for _, r in law])
        return law[int(rng.choice(len(law), p=w / w.sum()))][0]

    def __getstate__(self):
        d = dict(self.__dict__)
        d["_structures"] = {}
        return d


def _rate_fn(a, name):
    """Vectorised species -> rate map from a scalar, sequence or callable."""
    if callable(a):
        return lambda i: np.broadcast_to(np.asarray(a(np.asarray(i)), dtype=float), np.shape(i))
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 0:
        return lambda i: np.full(np.shape(i), float(arr))

    def fn(i):
        i = np.asarray(i)
        if np.any(i > arr.size):
            raise ValueError(f"{name} table too short for species {int(np.max(i))}")
        return arr[i - 1]

    return fn


class BeckerDoringKernel(CountKernel):
    """Monomer attachment ``{i,1} -> {i+1}`` and detachment ``{i} -> {i-1,1}``.

    The pair ``{1,1}`` carries rate ``2 a_1`` so that dimers form at rate
    ``a_1 x_1 (x_1 - 1) / N``, the classical Becker-Doring convention.
    """

    def __init__(self, a, b, max_species: int = 1000):
        super().__init__()
        self.a = _rate_fn(a, "a")
        if not callable(b) and np.ndim(b) == 0:
            # a constant detachment rate applies from dimers up; b_1 = 0
            c = float(b)
            b = lambda i: np.where(np.asarray(i) >= 2, c, 0.0)  # noqa: E731
        self.b = _rate_fn(b, "b")
        self.max_species = int(max_species)
        i = np.arange(1, self.max_species + 1)
        ai, bi = self.a(i), self.b(i)
        if np.any(ai < 0) or np.any(bi < 0):
            raise ValueError("rates must be nonnegative")
        if bi[0] != 0:
            raise ValueError("b_1 must be 0")
        self.signature = KernelSignature(k=2, e_conserving=True, one_nonincreasing=False, dust_floor=1.0)
        self.kernel_id = "becker-doring"

    def _channels(self, S):
        i = np.arange(1, S + 1)
        a = self.a(i)
        coag_z = [(1, int(s)) for s in i]
        coag_y = [(int(s) + 1,) for s in i]
        coag_r = a * np.where(i == 1, 2.0, 1.0)
        j = np.arange(2, S + 1)
        frag_z = [(int(s),) for s in j]
        frag_y = [(1, int(s) - 1) for s in j]
        frag_r = self.b(j) if j.size else np.zeros(0)
        kinds = [COAG] * S + [FRAG] * len(j)
        return coag_z + frag_z, coag_y + frag_y, kinds, np.concatenate([coag_r, frag_r])

    def rate_tables(self, n_max: int):
        i = np.arange(1, n_max + 1)
        return self.a(i).astype(float), self.b(i).astype(float)


class SmoluchowskiKernel(CountKernel):
    """Binary coagulation ``{i,j} -> {i+j}`` at rate ``K(i,j)`` on integer masses."""

    def __init__(self, K: Callable, check_points: int = 64):
        super().__init__()
        self.K = K
        x = np.arange(1, check_points + 1)
        X, Y = np.meshgrid(x, x)
        kxy = np.asarray(K(X, Y), dtype=float)
        if not np.allclose(kxy, kxy.T, rtol=1e-12, atol=0):
            raise ValueError("coagulation kernel must be symmetric")
        if np.any(kxy < 0):
            raise ValueError("coagulation kernel must be nonnegative")
        self.signature = KernelSignature(k=2, e_conserving=True, one_nonincreasing=True, dust_floor=1.0)
        self.kernel_id = "smoluchowski"

    def _channels(self, S):
        i, j = np.triu_indices(S)
        i, j = i + 1, j + 1
        rates = np.broadcast_to(np.asarray(self.K(i, j), dtype=float), i.shape)
        z = list(zip(i.tolist(), j.tolist()))
        y = [(a + b,) for a, b in z]
        return z, y, [COAG] * len(z), rates


class TableKernel(CountKernel):
    """Generic finite reaction table ``[(reactants, products, rate), ...]``.

    Species are positive integers; ``energy`` maps species to energies
    (default: the species label itself).
    """

    def __init__(self, reactions, energy: Callable | None = None, dust_floor: float | None = None,
                 kernel_id: str = "table"):
        super().__init__()
        self.reactions = [(tuple(sorted(int(v) for v in z)), tuple(sorted(int(v) for v in y)), float(r))
                          for z, y, r in reactions]
        for z, y, r in self.reactions:
            if r < 0:
                raise ValueError("negative rate")
            if not z or min(z) < 1 or (y and min(y) < 1):
                raise ValueError("species must be positive integers")
        self._energy = energy
        k = max([len(z) for z, _, _ in self.reactions], default=1)
        one_noninc = all(len(y) <= len(z) or len(z) != 1 for z, y, _ in self.reactions)
        floor = dust_floor
        if floor is None and not one_noninc:
            floor = float(min(np.min(self.energy(np.array(z))) for z, _, _ in self.reactions))
        e_cons = all(abs(self.energy(np.array(y)).sum() - self.energy(np.array(z)).sum()) <= 1e-12
                     for z, y, _ in self.reactions)
        self.signature = KernelSignature(k=k, e_conserving=e_cons, one_nonincreasing=one_noninc,
                                         dust_floor=floor)
        for z, y, _ in self.reactions:
            if len(y) > self.signature.d[len(z)]:
                raise ValueError(f"reaction {z}->{y} has too many products")
        self.kernel_id = kernel_id

    def energy(self, x):
        if self._energy is None:
            return np.asarray(x, dtype=float)
        return np.asarray(self._energy(np.asarray(x)), dtype=float)

    def _channels(self, S):
        rs = [(z, y, r) for z, y, r in self.reactions if max(z) <= S]
        return [z for z, _, _ in rs], [y for _, y, _ in rs], list(range(len(rs))), [r for *_, r in rs]


class TiltedCountKernel(CountKernel):
    """Count kernel with density ``eta`` against ``base``."""

    def __init__(self, base: CountKernel, eta: TiltFunction, kernel_id: str | None = None):
        self._base = base
        self._eta = eta
        self.signature = base.signature
        self.time_dependent = base.time_dependent or eta.time_dependent
        self.kernel_id = kernel_id or f"{base.kernel_id}*{eta.name}"
        self._cache = {}

    @property
    def base(self):
        return self._base

    @property
    def tilt(self):
        return self._eta

    def energy(self, x):
        return self._base.energy(x)

    def structure(self, support):
        return self._base.structure(support)

    def rates(self, t, st):
        if not self.time_dependent:
            key = st.support
            r = self._cache.get(key)
            if r is None:
                r = self._eta(0.0, st.jumps) * self._base.rates(0.0, st)
                self._cache[key] = r
            return r
        return self._eta(t, st.jumps) * self._base.rates(t, st)

    def majorant(self):
        return self._eta.declared_bound

    def __getstate__(self):
        d = dict(self.__dict__)
        d["_cache"] = {}
        return d


# --- pair kernels -------------------------------------------------------------

class PairKernel(Kernel):
    """Binary collisions of scalar particles with rates bounded by ``rate_bound``."""

    discrete = False
    n_products = 2
    rate_bound: float = 0.0
    quadrature_nodes: int = 64

    def pair_rate(self, t, v, w):
        raise NotImplementedError

    def product_rule(self, v, w):
        """Quadrature ``(products (P, Q, m), weights (Q,))`` for the normalised product law."""
        raise NotImplementedError

    def collide(self, t, v, w, rng):
        raise NotImplementedError

    def total_rate(self, t, z):
        if len(z) != 2:
            return 0.0
        return float(self.pair_rate(t, np.array([z[0]]), np.array([z[1]]))[0])

    def sample_products(self, t, z, rng):
        if len(z) != 2:
            raise ValueError("pair kernels only have binary channels")
        return tuple(self.collide(t, float(z[0]), float(z[1]), rng))

    def pair_jumps(self, v, w):
        """Product-rule jumps for pairs ``(v, w)`` as a flat batch plus weights."""
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        Y, wq = self.product_rule(v, w)
        P, Q, m = Y.shape
        R = np.repeat(np.stack([v, w], axis=1), Q, axis=0)
        J = Jumps(R, Y.reshape(P * Q, m), np.full(P * Q, 2, np.int64), np.full(P * Q, m, np.int64),
                  np.zeros(P * Q, np.int64))
        return J, wq

    def pair_integral(self, t, v, w, f: JumpFunction | None = None):
        """``int f(t, z, y) P(t, z, dy)`` for each pair ``z = (v_i, w_i)``."""
        base = self.pair_rate(t, v, w)
        if f is None:
            return base
        J, wq = self.pair_jumps(v, w)
        vals = f(t, J).reshape(len(v), len(wq))
        return base * (vals @ wq)


class KacBoltzmannKernel(PairKernel):
    """Kac caricature: every pair collides at rate ``lam``; the velocity pair
    is rotated by a uniform angle, conserving ``v**2 + w**2``."""

    def __init__(self, lam: float, quadrature_nodes: int = 64):
        if not lam > 0:
            raise ValueError("lambda must be positive")
        self.lam = float(lam)
        self.rate_bound = self.lam
        self.quadrature_nodes = int(quadrature_nodes)
        self.signature = KernelSignature(k=2, e_conserving=True, one_nonincreasing=True)
        self.kernel_id = f"kac(lambda={self.lam:g})"
        self._radial = {}

    def energy(self, x):
        x = np.asarray(x, dtype=float)
        return x * x

    def pair_rate(self, t, v, w):
        return np.full(np.shape(v), self.lam)

    @staticmethod
    def rotate(v, w, theta):
        c, s = np.cos(theta), np.sin(theta)
        return v * c - w * s, v * s + w * c

    def collide(self, t, v, w, rng):
        return self.rotate(v, w, rng.uniform(0.0, 2 * np.pi))

    def product_rule(self, v, w):
        Q = self.quadrature_nodes
        th = 2 * np.pi * np.arange(Q) / Q
        a, b = self.rotate(np.asarray(v)[:, None], np.asarray(w)[:, None], th[None, :])
        return np.stack([a, b], axis=-1), np.full(Q, 1.0 / Q)

    # For a time-constant f-tilt the angular average of exp(f(v') + f(w'))
    # depends on the pair only through s = v**2 + w**2.
    def radial_factor(self, f: TestFunction, s_max: float, n_nodes: int = 8193):
        key = id(f)
        hit = self._radial.get(key)
        # holding f in the entry keeps its id from being reused
        if hit is not None and hit[0] is f and hit[1] >= s_max:
            return hit[2]
        top = max(1.0, 1.25 * s_max)
        s = np.linspace(0.0, top, n_nodes)
        Q = self.quadrature_nodes
        th = 2 * np.pi * np.arange(Q) / Q
        r = np.sqrt(s)[:, None]
        vals = np.exp(f(0.0, r * np.cos(th)) + f(0.0, r * np.sin(th))).mean(axis=1)
        spl = CubicSpline(s, vals)
        self._radial[key] = (f, top, spl)
        return spl

    def __getstate__(self):
        d = dict(self.__dict__)
        d["_radial"] = {}
        return d


class ContinuousSmoluchowskiKernel(PairKernel):
    """Coagulation of real masses ``{x,y} -> {x+y}``, ``K <= rate_bound``."""

    n_products = 1

    def __init__(self, K: Callable, rate_bound: float):
        self.K = K
        self.rate_bound = float(rate_bound)
        self.signature = KernelSignature(k=2, e_conserving=True, one_nonincreasing=True)
        self.kernel_id = "smoluchowski-continuous"

    def energy(self, x):
        return np.asarray(x, dtype=float)

    def pair_rate(self, t, v, w):
        out = np.broadcast_to(np.asarray(self.K(np.asarray(v), np.asarray(w)), dtype=float), np.shape(v))
        if out.size and out.max() > self.rate_bound * (1 + 1e-12):
            raise ValueError("coagulation rate exceeds declared bound")
        return out

    def collide(self, t, v, w, rng):
        return (v + w,)

    def product_rule(self, v, w):
        return (np.asarray(v) + np.asarray(w))[:, None, None], np.ones(1)


class TiltedPairKernel(PairKernel):
    """Pair kernel with bounded density ``eta`` against ``base`` (simulated by thinning)."""

    def __init__(self, base: PairKernel, eta: TiltFunction, kernel_id: str | None = None):
        if eta.declared_bound is None:
            raise ValueError("tilts of continuous kernels need a declared bound")
        self._base = base
        self._eta = eta
        self.signature = base.signature
        self.n_products = base.n_products
        self.rate_bound = base.rate_bound * eta.declared_bound
        self.quadrature_nodes = base.quadrature_nodes
        self.time_dependent = base.time_dependent or eta.time_dependent
        self.kernel_id = kernel_id or f"{base.kernel_id}*{eta.name}"

    @property
    def base(self):
        return self._base

    @property
    def tilt(self):
        return self._eta

    def energy(self, x):
        return self._base.energy(x)

    def majorant(self):
        return self._eta.declared_bound

    def product_rule(self, v, w):
        return self._base.product_rule(v, w)

    def collide(self, t, v, w, rng):
        # acceptance-rejection against the base product law
        M = self._eta.declared_bound
        z = np.array([[v, w]])
        while True:
            y = np.atleast_1d(self._base.collide(t, v, w, rng))
            J = Jumps(z, y[None, :], np.array([2]), np.array([y.size]), np.zeros(1, np.int64))
            if rng.uniform() * M < self._eta(t, J)[0]:
                return tuple(y)

    def pair_rate(self, t, v, w):
        return self._base.pair_integral(t, v, w, self._eta)

    def pair_integral(self, t, v, w, f=None):
        if f is None:
            fast = self._radial_rate(t, v, w)
            if fast is not None:
                return fast
            return self._base.pair_integral(t, v, w, self._eta)
        return self._base.pair_integral(t, v, w, self._eta * f)

    def _radial_rate(self, t, v, w):
        f = self._eta.log_increment
        if f is None or f.time_dependent or not isinstance(self._base, KacBoltzmannKernel):
            return None
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        s = v * v + w * w
        spl = self._base.radial_factor(f, float(s.max(initial=0.0)))
        return self._base.lam * np.exp(-f(0.0, v) - f(0.0, w)) * spl(s)


# --- constructors -------------------------------------------------------------

def bd_kernel(a, b, max_species: int = 1000) -> BeckerDoringKernel:
    return BeckerDoringKernel(a, b, max_species)


def smoluchowski_kernel(K: Callable, mass_space: str = "integer", rate_bound: float | None = None):
    """Coagulation kernel on integer masses (count table) or real masses."""
    if mass_space == "integer":
        return SmoluchowskiKernel(K)
    if mass_space == "continuous":
        if rate_bound is None:
            raise ValueError("continuous masses need a rate bound for thinning")
        return ContinuousSmoluchowskiKernel(K, rate_bound)
    raise ValueError(f"unknown mass space {mass_space!r}")


def kac_kernel(lam: float, quadrature_nodes: int = 64) -> KacBoltzmannKernel:
    return KacBoltzmannKernel(lam, quadrature_nodes)


def table_kernel(reactions, energy=None, dust_floor=None) -> TableKernel:
    return TableKernel(reactions, energy, dust_floor)


def zero_kernel() -> TableKernel:
    """Kernel with no channels."""
    return TableKernel([], kernel_id="zero")


def tilt_eta(base: Kernel, eta: TiltFunction) -> Kernel:
    if isinstance(base, CountKernel):
        return TiltedCountKernel(base, eta)
    if isinstance(base, PairKernel):
        return TiltedPairKernel(base, eta)
    raise TypeError(f"cannot tilt {type(base).__name__}")


def tilt_f(base: Kernel, f: TestFunction) -> Kernel:
    """Kernel with density ``exp(L[f])`` against ``base``."""
    eta = TiltFunction.exp_increment(f, base.signature.k)
    return tilt_eta(base, eta)


def energy_balance(kern: Kernel, J: Jumps) -> np.ndarray:
    """``sum E(y) - sum E(z)`` per jump."""
    e = lambda t, x: kern.energy(x)  # noqa: E731
    return masked_sum(e, 0.0, J.products, J.product_mask) - masked_sum(e, 0.0, J.reactants, J.reactant_mask)


def cutoff(base: Kernel, n: float, eta: TiltFunction | None = None) -> Kernel:
    """Bounded cut-off: density ``min(eta, n)`` on jumps whose reactant and
    product energies are both at most ``n``, zero elsewhere."""
    if not n > 0:
        raise ValueError("cut-off level must be positive")
    if math.isinf(n):
        return base if eta is None else tilt_eta(base, eta)

    def energy_sum(x, mask):
        return np.where(mask, base.energy(x), 0.0).sum(axis=1)

    def fn(t, J):
        val = np.full(len(J), min(1.0, n)) if eta is None else np.minimum(eta(t, J), n)
        ok = (energy_sum(J.reactants, J.reactant_mask) <= n) & (energy_sum(J.products, J.product_mask) <= n)
        return np.where(ok, val, 0.0)

    bound = min(1.0, n) if eta is None else min(n, eta.declared_bound or n)
    td = False if eta is None else eta.time_dependent
    return tilt_eta(base, TiltFunction(fn, bound, td, f"cutoff({n:g})"))


# --- norms and condition reports -----------------------------------------------

def _probe_rates(kern: Kernel, probe, t=0.0):
    out = []
    for z in probe:
        z = tuple(z)
        e = np.asarray(kern.energy(np.array(z, dtype=float)), dtype=float)
        out.append((z, kern.total_rate(t, z), e))
    return out


def kernel_norm_tensor(kern: Kernel, probe=None) -> float:
    """``sup P(t, z) / prod (1 + E(z_j))`` over channels.

    Becker-Doring uses the closed form over its rate tables (``+inf`` when
    the ratio is unbounded on the table range), Kac gives ``lambda``; other
    kernels take the sup over ``probe``.
    """
    if isinstance(kern, BeckerDoringKernel) and probe is None:
        i = np.arange(1, kern.max_species + 1)
        a, b = kern.rate_tables(kern.max_species)
        coag = np.where(i == 1, 2 * a, a) / (2.0 * (1 + i))
        frag = b[1:] / (1.0 + i[1:])
        # a ratio still climbing at the end of the table signals a divergent sup
        for r in (coag, frag):
            if r.size > 1 and r.argmax() == r.size - 1 and r[-1] > r[-2]:
                return math.inf
        return float(max(coag.max(), frag.max(initial=0.0)))
    if isinstance(kern, KacBoltzmannKernel) and probe is None:
        return kern.lam
    if isinstance(kern, TableKernel) and probe is None:
        probe = [z for z, _, _ in kern.reactions]
    if probe is None:
        raise ValueError("a probe set is required for this kernel")
    best = 0.0
    for z, r, e in _probe_rates(kern, probe):
        best = max(best, r / float(np.prod(1.0 + e)))
    return best


@dataclass
class ConditionReport:
    tensor_ratios: list      # (<E, delta_z>, P / (1+E)^{tensor}) along the probe
    tensor_decay: bool | None
    plus_norm: float
    lambda0: float
    beta: float
    notes: list

    def as_dict(self):
        return {"tensor_ratios": self.tensor_ratios, "tensor_decay": self.tensor_decay,
                "plus_norm": self.plus_norm, "lambda0": self.lambda0, "beta": self.beta, "notes": self.notes}


def check_conditions(kern: Kernel, beta: float = 2.0, probe=None, t: float = 0.0) -> ConditionReport:
    """Sampled evidence for the (tensor), (plus) and jump-control conditions.

    ``probe`` is a list of reactant multisets spanning increasing energies.
    The jump-control constant is the sup over the probe of
    ``int (exp|D<1+E^beta>| - 1) P(dy) / <1+E^beta, delta_z>``.
    """
    notes = []
    if probe is None:
        if isinstance(kern, CountKernel):
            probe = [(1, i) for i in range(1, 201)] + [(i,) for i in range(1, 201)]
        else:
            probe = [(v, v) for v in np.linspace(0.0, 20.0, 81)]
    ratios, plus, lam0 = [], 0.0, 0.0
    for z in probe:
        z = tuple(z)
        zf = np.array(z, dtype=float)
        e = kern.energy(zf)
        r = kern.total_rate(t, z)
        ratios.append((float(e.sum()), r / float(np.prod(1.0 + e))))
        plus = max(plus, r / float(np.sum(1.0 + e)))
        if r <= 0:
            continue
        wz = float(np.sum(1.0 + e ** beta))
        if isinstance(kern, CountKernel):
            law = kern.product_law(t, z)
            acc = sum(rr * math.expm1(abs(float(np.sum(1.0 + kern.energy(np.array(y, dtype=float)) ** beta)) - wz))
                      for y, rr in law)
        else:
            Y, wq = kern.product_rule(np.array([zf[0]]), np.array([zf[1]]))
            ey = np.sum(1.0 + kern.energy(Y[0]) ** beta, axis=-1)
            with np.errstate(over="ignore"):
                acc = r * float(np.dot(np.expm1(np.abs(ey - wz)), wq))
        lam0 = max(lam0, acc / wz)
    ratios.sort()
    decay = None
    if len(ratios) >= 4:
        vals = np.array([q for _, q in ratios])
        head = vals[: len(vals) // 4].max()
        tail = vals[-max(1, len(vals) // 10):].max()
        decay = bool(tail < 0.5 * head) if head > 0 else True
        if head == 0:
            notes.append("all probed rates vanish")
    else:
        notes.append("probe too small for a decay verdict")
    return ConditionReport(ratios, decay, plus, lam0, beta, notes)
