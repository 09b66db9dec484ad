"""Particle configurations, empirical measures and the combinatorial
measures that drive k-nary jump rates.

A configuration is a finite multiset of points of the state space. Two
storage layouts are offered behind one type: a species-count table for
discrete spaces (Becker-Doring, Smoluchowski on integer masses) and a
plain particle list for continuous spaces (Kac velocities). Both are
canonicalised to a sorted tuple of ``(value, multiplicity)`` pairs, so
equality and hashing never depend on the order particles were supplied.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

__all__ = [
    "ConsistencyError",
    "BoundViolation",
    "SystemState",
    "EmpiricalMeasure",
    "TestFunction",
    "YoungDecomposition",
    "kappa_integrate",
    "kappa_enumerate",
    "tensor_power_integrate",
    "young_gap",
    "young_schemes",
    "young_decompose_check",
]

REL_TOL = 1e-12


class ConsistencyError(RuntimeError):
    """An identity that must hold exactly was violated beyond round-off."""


class BoundViolation(ValueError):
    """A test function exceeded its declared sup-norm."""


def _canon(value):
    # numpy scalars -> python scalars so that hashing is stable
    if isinstance(value, np.generic):
        return value.item()
    return value


class SystemState:
    """Finite multiset of particle states.

    Parameters
    ----------
    items : mapping or iterable
        Either ``{value: multiplicity}`` or an iterable of values.
    representation : {"counts", "particles"}
        Storage layout tag. It changes how ``kappa_integrate`` is evaluated,
        never the result.
    """

    __slots__ = ("_items", "_size", "representation")

    def __init__(self, items, representation: str = "counts"):
        if representation not in ("counts", "particles"):
            raise ValueError(f"unknown representation {representation!r}")
        if isinstance(items, Mapping):
            counter = Counter()
            for v, n in items.items():
                n = int(n)
                if n < 0:
                    raise ValueError("negative multiplicity")
                if n:
                    counter[_canon(v)] += n
        else:
            counter = Counter(_canon(v) for v in items)
        self._items = tuple(sorted(counter.items()))
        self._size = sum(n for _, n in self._items)
        self.representation = representation

    @classmethod
    def from_counts(cls, counts: Mapping) -> "SystemState":
        return cls(counts, "counts")

    @classmethod
    def from_particles(cls, values: Iterable) -> "SystemState":
        return cls(list(values), "particles")

    @property
    def items(self) -> tuple:
        """Sorted ``(value, multiplicity)`` pairs."""
        return self._items

    def __len__(self) -> int:
        return self._size

    def __iter__(self):
        for v, n in self._items:
            for _ in range(n):
                yield v

    def particles(self) -> tuple:
        return tuple(iter(self))

    def counts(self) -> dict:
        return dict(self._items)

    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self._items])

    def multiplicities(self) -> np.ndarray:
        return np.array([n for _, n in self._items], dtype=np.int64)

    def as_representation(self, representation: str) -> "SystemState":
        return SystemState(dict(self._items), representation)

    def __eq__(self, other):
        if not isinstance(other, SystemState):
            return NotImplemented
        return self._items == other._items

    def __hash__(self):
        return hash(self._items)

    def __repr__(self):
        return f"SystemState({dict(self._items)!r}, {self.representation!r})"


@dataclass(frozen=True)
class EmpiricalMeasure:
    """``h`` times the counting measure of a configuration."""

    base: SystemState
    weight: float

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("weight must be positive")

    @property
    def h(self) -> float:
        return self.weight

    def total_mass(self) -> float:
        return self.weight * len(self.base)

    def pair(self, g: Callable) -> float:
        """``<g, mu>`` for a function vectorised over an array of points."""
        if len(self.base) == 0:
            return 0.0
        vals = np.asarray(g(self.base.values()), dtype=float)
        return self.weight * float(np.dot(vals, self.base.multiplicities()))

    def moment(self, energy: Callable, power: float = 1.0) -> float:
        """``<1 + E**power, mu>``."""
        return self.pair(lambda x: 1.0 + np.asarray(energy(x), dtype=float) ** power)

    def atoms(self):
        """Atoms and their masses, the form expected by tensor powers."""
        return [v for v, _ in self.base.items], self.weight * self.base.multiplicities().astype(float)


class TestFunction:
    """Bounded function of ``(t, x)`` with an optional time derivative.

    ``evaluator`` and ``time_derivative`` take a time and an array of
    points and return an array. Every evaluation is checked against the
    declared bound.
    """

    __test__ = False  # not a pytest class

    def __init__(self, evaluator: Callable, bound: float, time_derivative: Callable | None = None,
                 time_dependent: bool | None = None, name: str = ""):
        if bound < 0:
            raise ValueError("bound must be nonnegative")
        self.evaluator = evaluator
        self.bound = float(bound)
        self.time_derivative = time_derivative
        self.time_dependent = (time_derivative is not None) if time_dependent is None else time_dependent
        self.name = name

    def __call__(self, t, x):
        x = np.asarray(x)
        val = np.asarray(self.evaluator(t, x), dtype=float)
        if val.shape != x.shape:
            val = np.broadcast_to(val, x.shape).astype(float)
        if val.size and np.max(np.abs(val)) > self.bound * (1 + REL_TOL) + REL_TOL:
            raise BoundViolation(f"|g| = {np.max(np.abs(val))} exceeds declared bound {self.bound}")
        return val

    def derivative(self, t, x):
        x = np.asarray(x)
        if self.time_derivative is None:
            return np.zeros(x.shape)
        val = np.asarray(self.time_derivative(t, x), dtype=float)
        return np.broadcast_to(val, x.shape).astype(float)

    def __neg__(self):
        d = self.time_derivative
        return TestFunction(lambda t, x: -self.evaluator(t, x), self.bound,
                            None if d is None else (lambda t, x: -d(t, x)),
                            self.time_dependent, name=f"-{self.name}")

    @classmethod
    def zero(cls):
        return cls(lambda t, x: np.zeros(np.shape(x)), 0.0, name="0")

    @classmethod
    def constant(cls, c: float):
        return cls(lambda t, x: np.full(np.shape(x), float(c)), abs(c), name=f"{c}")

    @classmethod
    def from_table(cls, table, name: str = "table"):
        """Species function given by ``table[i]`` for integer species ``i``.

        Entries beyond the table are zero.
        """
        tab = np.asarray(table, dtype=float)

        def ev(t, x):
            x = np.asarray(x, dtype=np.int64)
            out = np.zeros(x.shape)
            ok = (x >= 0) & (x < tab.size)
            out[ok] = tab[x[ok]]
            return out

        return cls(ev, float(np.max(np.abs(tab))) if tab.size else 0.0, name=name)


# --- kappa and tensor powers ---------------------------------------------

def _sub_multisets(mults, ell):
    """Yield multiplicity vectors k with 0 <= k_s <= n_s and sum ell."""
    m = len(mults)
    tail = np.concatenate([np.cumsum(mults[::-1])[::-1], [0]])

    def rec(s, left, acc):
        if left == 0:
            yield acc + [0] * (m - s)
            return
        if s == m or tail[s] < left:
            return
        for k in range(min(mults[s], left), -1, -1):
            yield from rec(s + 1, left - k, acc + [k])

    yield from rec(0, ell, [])


def _check_ell(ell):
    if int(ell) != ell or ell <= 0:
        raise ValueError("ell must be a positive integer")
    return int(ell)


def kappa_integrate(state: SystemState, ell: int, f: Callable) -> float:
    """Sum of ``f`` over all size-``ell`` sub-multisets of ``state``.

    ``f`` receives a tuple of ``ell`` points. Count tables use products of
    binomial coefficients; particle lists enumerate index subsets.
    """
    ell = _check_ell(ell)
    if len(state) < ell:
        return 0.0
    if state.representation == "particles":
        return kappa_enumerate(state, ell, f)
    vals = [v for v, _ in state.items]
    mults = [n for _, n in state.items]
    total = 0.0
    for ks in _sub_multisets(mults, ell):
        coef = 1
        z = []
        for v, n, k in zip(vals, mults, ks):
            if k:
                coef *= math.comb(n, k)
                z.extend([v] * k)
        total += coef * f(tuple(z))
    return float(total)


def kappa_enumerate(state: SystemState, ell: int, f: Callable) -> float:
    """Reference evaluation of kappa by explicit index-subset enumeration."""
    ell = _check_ell(ell)
    parts = state.particles()
    return float(sum(f(tuple(parts[i] for i in idx)) for idx in itertools.combinations(range(len(parts)), ell)))


def _atoms_of(mu):
    if isinstance(mu, EmpiricalMeasure):
        return mu.atoms()
    if isinstance(mu, Mapping):
        return list(mu.keys()), np.asarray(list(mu.values()), dtype=float)
    atoms, masses = mu
    return list(atoms), np.asarray(masses, dtype=float)


def tensor_power_integrate(mu, ell: int, f: Callable) -> float:
    """Integral of ``f`` against the symmetric tensor power of ``mu``.

    ``mu`` is an ``EmpiricalMeasure``, a mapping ``atom -> mass`` or a pair
    ``(atoms, masses)``. The power carries the ``1/ell!`` normalisation.
    """
    ell = _check_ell(ell)
    atoms, masses = _atoms_of(mu)
    total = 0.0
    for idx in itertools.product(range(len(atoms)), repeat=ell):
        w = 1.0
        for i in idx:
            w *= masses[i]
        if w:
            total += w * f(tuple(atoms[i] for i in idx))
    return total / math.factorial(ell)


def young_gap(state: SystemState, h: float, ell: int, f: Callable) -> float:
    """Tensor power of ``h delta_x`` minus ``h**ell kappa^ell`` on ``f``.

    Nonnegative for nonnegative ``f``; a negative value beyond round-off
    raises ``ConsistencyError``.
    """
    ell = _check_ell(ell)
    if not 0 < h <= 1:
        raise ValueError("h must lie in (0, 1]")
    tp = tensor_power_integrate(EmpiricalMeasure(state, h), ell, f) if len(state) else 0.0
    kp = h ** ell * kappa_integrate(state, ell, f)
    gap = tp - kp
    if gap < -REL_TOL * max(1.0, abs(tp), abs(kp)):
        raise ConsistencyError(f"negative Young gap {gap}")
    return gap


# --- Young schemes ---------------------------------------------------------

@dataclass(frozen=True)
class YoungDecomposition:
    order: int
    diagonal_terms: tuple  # ((scheme, alpha), ...)
    residual: float = 0.0

    def coefficient(self, scheme) -> float:
        for g, a in self.diagonal_terms:
            if tuple(g) == tuple(scheme):
                return a
        raise KeyError(scheme)


def young_schemes(ell: int) -> list:
    """Partitions of ``ell`` into at most ``ell-1`` parts, parts ascending."""
    out = []

    def rec(left, smallest, acc):
        if left == 0:
            if len(acc) <= ell - 1:
                out.append(tuple(acc))
            return
        for p in range(smallest, left + 1):
            rec(left - p, p, acc + [p])

    rec(ell, 1, [])
    return out


def _scheme_feature(parts, mults, scheme, g):
    """Sum over ordered r-tuples of atoms of prod_j g(y_j)**gamma_j."""
    gv = np.array([g(p) for p in parts])
    out = 1.0
    for gam in scheme:
        out *= float(np.dot(mults, gv ** gam))
    return out


def young_decompose_check(state: SystemState, ell: int, n_probe: int = 8, seed: int = 0) -> YoungDecomposition:
    """Recover the diagonal coefficients of the Young-scheme expansion.

    Writes ``kappa^ell = tensor power + sum_G alpha_G * (diagonal term G)``
    and solves for ``alpha`` by evaluating both sides on random product test
    functions ``f(z) = prod g(z_j)``. Raises ``ConsistencyError`` if the
    overdetermined system has a nonzero residual.
    """
    ell = _check_ell(ell)
    if ell not in (2, 3):
        raise ValueError("only ell in {2, 3} is supported")
    if len(state) > 8:
        raise ValueError("enumeration regime requires at most 8 particles")
    schemes = young_schemes(ell)
    vals = [v for v, _ in state.items]
    mults = state.multiplicities().astype(float)
    rng = np.random.default_rng(seed)
    rows, rhs = [], []
    for _ in range(max(n_probe, 2 * len(schemes))):
        table = {v: rng.uniform(0.5, 2.0) for v in vals}
        g = table.__getitem__

        def f(z, g=g):
            out = 1.0
            for zi in z:
                out *= g(zi)
            return out

        lhs = kappa_enumerate(state, ell, f) - tensor_power_integrate((vals, mults), ell, f)
        rows.append([_scheme_feature(vals, mults, s, g) for s in schemes])
        rhs.append(lhs)
    A = np.array(rows)
    b = np.array(rhs)
    if np.linalg.matrix_rank(A, tol=1e-9 * np.max(np.abs(A))) < len(schemes):
        raise ValueError("state has too few distinct points to identify all coefficients")
    alpha, *_ = np.linalg.lstsq(A, b, rcond=None)
    res = float(np.max(np.abs(A @ alpha - b)) / max(1.0, np.max(np.abs(b))))
    if res > 1e-10:
        raise ConsistencyError(f"Young-scheme system inconsistent (residual {res:.3g})")
    return YoungDecomposition(ell, tuple(zip(schemes, (float(a) for a in alpha))), res)
