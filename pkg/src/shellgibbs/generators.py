"""Cylindrical polynomials and the Ornstein-Uhlenbeck / Liouville / Kolmogorov operators.

A :class:`CylPoly` is a finite sum of monomials in the coordinates
``x_{n,j}`` (``1 <= n <= M``, ``j in {1, 2}``).  When every coefficient is
rational (``int`` or ``Fraction``) the whole pipeline, including the Gaussian
expectation, runs in exact rational arithmetic, so identities such as
``E[K phi] = 0`` are certified with zero residual.  Float coefficients switch
to floating point with compensated summation.

Monomials are stored as sorted tuples of ``(var, exponent)`` with
``var = 2*(n-1) + (j-1)``.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from fractions import Fraction
from functools import lru_cache
from numbers import Rational
from typing import TYPE_CHECKING

import numpy as np

from .errors import BoundaryClosureError, DomainError, ResourceError
from .nonlinearity import ModelParams, real_terms
from .spectral import GridParams, exact_wavenumber

if TYPE_CHECKING:
    from .gibbs import GibbsParams

__all__ = [
    "CylPoly",
    "MAX_TERMS",
    "add",
    "multiply",
    "differentiate",
    "gaussian_expectation",
    "apply_Q",
    "apply_L",
    "apply_K",
    "skew_symmetry_check",
    "b_polynomial",
    "monomial_basis",
]

MAX_TERMS = 1_000_000


def _var(n: int, j: int) -> int:
    return 2 * (n - 1) + (j - 1)


def _unvar(v: int) -> tuple[int, int]:
    return v // 2 + 1, v % 2 + 1


def _is_exact(c) -> bool:
    return isinstance(c, Rational) and not isinstance(c, bool)


def _norm(c):
    """Demote integral Fractions to int; int arithmetic is far cheaper."""
    if type(c) is Fraction and c.denominator == 1:
        return int(c.numerator)
    return c


def _mono_mul(a: tuple, b: tuple) -> tuple:
    if not a:
        return b
    if not b:
        return a
    d = dict(a)
    for v, e in b:
        d[v] = d.get(v, 0) + e
    return tuple(sorted(d.items()))


class CylPoly:
    """Polynomial in finitely many shell coordinates, in canonical form."""

    __slots__ = ("terms", "grid")

    def __init__(self, terms=None, grid: GridParams | None = None):
        self.grid = grid if grid is not None else GridParams()
        clean = {}
        for mono, c in (terms or {}).items():
            if c == 0:
                continue
            mono = tuple(sorted((int(v), int(e)) for v, e in mono if e))
            for v, e in mono:
                if e < 0:
                    raise DomainError("negative exponent in monomial")
                if not 0 <= v < 2 * self.grid.M:
                    raise DomainError(f"coordinate {_unvar(v)} outside the grid (M={self.grid.M})")
            clean[mono] = clean.get(mono, 0) + c
        self.terms = {m: c for m, c in clean.items() if c != 0}
        if len(self.terms) > MAX_TERMS:
            raise ResourceError(f"polynomial has {len(self.terms)} terms (budget {MAX_TERMS})")

    # constructors -------------------------------------------------------
    @classmethod
    def const(cls, c, grid=None) -> "CylPoly":
        return cls({(): c}, grid)

    @classmethod
    def var(cls, n: int, j: int, grid=None, power: int = 1, coeff=1) -> "CylPoly":
        return cls({((_var(n, j), power),): coeff}, grid)

    @classmethod
    def monomial(cls, factors, coeff=1, grid=None) -> "CylPoly":
        """``coeff * prod x_{n,j}^d`` from an iterable of ``(n, j, d)``."""
        d = {}
        for n, j, e in factors:
            if j not in (1, 2) or n < 1:
                raise DomainError(f"invalid coordinate ({n}, {j})")
            d[_var(n, j)] = d.get(_var(n, j), 0) + e
        return cls({tuple(sorted(d.items())): coeff}, grid)

    # algebra ------------------------------------------------------------
    def _check(self, other: "CylPoly"):
        if self.grid != other.grid:
            raise DomainError("polynomials live on different grids")

    def _wrap(self, terms) -> "CylPoly":
        p = CylPoly.__new__(CylPoly)
        p.grid = self.grid
        p.terms = terms
        if len(terms) > MAX_TERMS:
            raise ResourceError(f"polynomial has {len(terms)} terms (budget {MAX_TERMS})")
        return p

    def __add__(self, other):
        if not isinstance(other, CylPoly):
            other = CylPoly.const(other, self.grid)
        self._check(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            s = out.get(m, 0) + c
            if s == 0:
                out.pop(m, None)
            else:
                out[m] = s
        return self._wrap(out)

    __radd__ = __add__

    def __neg__(self):
        return self._wrap({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other if isinstance(other, CylPoly) else -other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, CylPoly):
            if other == 0:
                return self._wrap({})
            return self._wrap({m: c * other for m, c in self.terms.items()})
        self._check(other)
        if len(self.terms) * len(other.terms) > 50 * MAX_TERMS:
            raise ResourceError("product exceeds the polynomial size budget")
        out = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = _mono_mul(m1, m2)
                out[m] = out.get(m, 0) + c1 * c2
        return self._wrap({m: c for m, c in out.items() if c != 0})

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = CylPoly.const(1, self.grid)
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, CylPoly):
            other = CylPoly.const(other, self.grid)
        return self.grid == other.grid and self.terms == other.terms

    def __hash__(self):
        return hash((self.grid, frozenset(self.terms.items())))

    def __len__(self):
        return len(self.terms)

    def __repr__(self):
        if not self.terms:
            return "CylPoly(0)"
        parts = []
        for m, c in sorted(self.terms.items()):
            fac = "*".join(
                f"x{_unvar(v)[0]}_{_unvar(v)[1]}" + (f"^{e}" if e > 1 else "") for v, e in m
            )
            parts.append(f"{c}" + (f"*{fac}" if fac else ""))
        return "CylPoly(" + " + ".join(parts) + ")"

    # calculus -----------------------------------------------------------
    def differentiate(self, n: int, j: int) -> "CylPoly":
        """Formal partial derivative with respect to ``x_{n,j}``."""
        target = _var(n, j)
        out = {}
        for m, c in self.terms.items():
            for i, (v, e) in enumerate(m):
                if v == target:
                    rest = m[:i] + (((v, e - 1),) if e > 1 else ()) + m[i + 1:]
                    out[rest] = out.get(rest, 0) + c * e
                    break
        return self._wrap({m: c for m, c in out.items() if c != 0})

    # inspection ---------------------------------------------------------
    @property
    def exact(self) -> bool:
        return all(_is_exact(c) for c in self.terms.values())

    def degree(self) -> int:
        return max((sum(e for _, e in m) for m in self.terms), default=0)

    def variables(self) -> set[tuple[int, int]]:
        return {_unvar(v) for m in self.terms for v, _ in m}

    def max_mode(self) -> int:
        return max((n for n, _ in self.variables()), default=0)

    def is_constant(self) -> bool:
        return all(not m for m in self.terms)

    def evaluate(self, x) -> np.ndarray:
        """Evaluate on states of trailing shape ``(M', 2)`` with ``M' >= max_mode``."""
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(x.shape[:-2] + (-1,))
        out = np.zeros(x.shape[:-2])
        for m, c in self.terms.items():
            t = np.full(x.shape[:-2], float(c))
            for v, e in m:
                t = t * flat[..., v] ** e
            out = out + t
        return out

    # serialisation ------------------------------------------------------
    def to_json_obj(self) -> list:
        items = []
        for m, c in sorted(self.terms.items()):
            mono = [[*_unvar(v), e] for v, e in m]
            coeff = str(Fraction(c)) if _is_exact(c) else float(c)
            items.append({"monomial": mono, "coeff": coeff})
        return items

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())

    @classmethod
    def from_json(cls, data, grid=None) -> "CylPoly":
        if isinstance(data, str):
            data = json.loads(data)
        terms = {}
        for item in data:
            mono = tuple(sorted((_var(n, j), e) for n, j, e in item["monomial"]))
            c = item["coeff"]
            c = Fraction(c) if isinstance(c, str) else float(c)
            terms[mono] = terms.get(mono, 0) + c
        return cls(terms, grid)


def add(*polys: CylPoly) -> CylPoly:
    out = polys[0]
    for p in polys[1:]:
        out = out + p
    return out


def multiply(*polys: CylPoly) -> CylPoly:
    out = polys[0]
    for p in polys[1:]:
        out = out * p
    return out


def differentiate(phi: CylPoly, n: int, j: int) -> CylPoly:
    return phi.differentiate(n, j)


# ---------------------------------------------------------------------------
# Gaussian integration


def _double_factorial_odd(k: int) -> int:
    """(2k-1)!!"""
    out = 1
    for i in range(1, 2 * k, 2):
        out *= i
    return out


def _nu(params, exact: bool):
    return _norm(Fraction(params.nu)) if exact else float(params.nu)


def _monomial_moment(mono: tuple, nu, exact: bool):
    total_half = 0
    prod = 1
    for _, e in mono:
        if e % 2:
            return 0
        prod *= _double_factorial_odd(e // 2)
        total_half += e // 2
    if exact:
        return Fraction(prod) / nu**total_half
    return prod / nu**total_half


def gaussian_expectation(phi: CylPoly, params: "GibbsParams"):
    """Exact integral of ``phi`` against the product Gaussian with variance ``1/nu``.

    Uses ``E[x^{2k}] = (2k-1)!! nu^{-k}``, zero odd moments and independence.
    Returns a ``Fraction`` for rational polynomials and a float otherwise.
    """
    exact = phi.exact
    if not exact:
        nu = float(params.nu)
        return math.fsum(float(c) * _monomial_moment(m, nu, False) for m, c in phi.terms.items())
    # group by total half-degree so the division by nu^k happens once per k
    by_order = {}
    for m, c in phi.terms.items():
        prod, half = 1, 0
        for _, e in m:
            if e & 1:
                break
            prod *= _double_factorial_odd(e >> 1)
            half += e >> 1
        else:
            by_order[half] = by_order.get(half, 0) + c * prod
    nu = _norm(Fraction(params.nu))
    total = Fraction(0)
    for half, s in by_order.items():
        total += Fraction(s) / Fraction(nu) ** half if nu != 1 else s
    return Fraction(total)


# ---------------------------------------------------------------------------
# Operators


def _k2(grid: GridParams, n: int, exact: bool):
    k = exact_wavenumber(grid, n)
    return _norm(k * k) if exact else float(k * k)


def apply_Q(phi: CylPoly, params: "GibbsParams") -> CylPoly:
    """Ornstein-Uhlenbeck operator ``sum k_n^2 (d^2/dx^2 - nu x d/dx)``."""
    exact = phi.exact
    nu = _nu(params, exact)
    grid = phi.grid
    out = {}
    for m, c in phi.terms.items():
        diag = 0
        for i, (v, e) in enumerate(m):
            n = v // 2 + 1
            k2 = _k2(grid, n, exact)
            diag += k2 * e
            if e >= 2:
                rest = m[:i] + (((v, e - 2),) if e > 2 else ()) + m[i + 1:]
                out[rest] = out.get(rest, 0) + c * k2 * e * (e - 1)
        if diag:
            out[m] = out.get(m, 0) - c * nu * diag
    return phi._wrap({m: c for m, c in out.items() if c != 0})


@lru_cache(maxsize=256)
def _b_terms(grid: GridParams, model: ModelParams, n: int, j: int, limit: int, exact: bool):
    """Monomials of ``B_{n,j}(x, x)`` referencing modes ``<= limit``.

    Returns ``(terms, overflow)`` where ``overflow`` is True when some
    nonzero term needs a mode above ``limit``.
    """
    terms = {}
    overflow = False
    for t in real_terms(model.variant):
        if t.out_j != j:
            continue
        coef = model.coefficient(t.coef)
        if coef == 0:
            continue
        iu, iv = n + t.du, n + t.dv
        if iu < 1 or iv < 1:
            continue
        if iu > limit or iv > limit:
            overflow = True
            continue
        if exact:
            c = _norm(t.sign * Fraction(coef) * exact_wavenumber(grid, n + t.dk))
        else:
            c = t.sign * float(coef) * float(exact_wavenumber(grid, n + t.dk))
        mono = _mono_mul(((_var(iu, t.ju), 1),), ((_var(iv, t.jv), 1),))
        terms[mono] = _norm(terms.get(mono, 0) + c)
    return tuple((m, c) for m, c in terms.items() if c != 0), overflow


def b_polynomial(n: int, j: int, model: ModelParams, grid: GridParams, truncation: int | None = None,
                 exact: bool = True) -> CylPoly:
    """``B_{n,j}(x, x)`` (or ``B^m_{n,j}``) as a quadratic polynomial."""
    if truncation is None:
        terms, overflow = _b_terms(grid, model, n, j, grid.M, exact)
        if overflow:
            raise BoundaryClosureError(
                f"B_{n},{j} needs modes up to {n + 2} but the grid stops at M={grid.M}; "
                "use a truncation level or keep the support <= M-2"
            )
    else:
        if n > truncation:
            return CylPoly({}, grid)
        terms, _ = _b_terms(grid, model, n, j, truncation, exact)
    p = CylPoly.__new__(CylPoly)
    p.grid, p.terms = grid, dict(terms)
    return p


def apply_L(phi: CylPoly, model: ModelParams, params: "GibbsParams", truncation: int | None = None) -> CylPoly:
    """Liouville operator ``-sum B_{n,j}(x,x) d phi/dx_{n,j}``.

    With ``truncation=m`` the Galerkin ``B^m`` is used.  Without it, the full
    ``B`` is required, which raises :class:`BoundaryClosureError` when
    ``phi`` touches a shell within two of the grid edge.
    """
    grid = phi.grid
    # float model/grid parameters are binary rationals and convert exactly
    exact = phi.exact
    if truncation is not None and not 1 <= truncation <= grid.M:
        raise DomainError(f"truncation {truncation} outside 1..{grid.M}")
    out = {}
    for n, j in sorted(phi.variables()):
        d = phi.differentiate(n, j)
        if not d.terms:
            continue
        b = b_polynomial(n, j, model, grid, truncation, exact=exact)
        for m1, c1 in b.terms.items():
            for m2, c2 in d.terms.items():
                m = _mono_mul(m1, m2)
                out[m] = out.get(m, 0) - c1 * c2
    return phi._wrap({m: c for m, c in out.items() if c != 0})


def apply_K(phi: CylPoly, model: ModelParams, params: "GibbsParams", truncation: int | None = None) -> CylPoly:
    """Kolmogorov operator ``K = Q + L`` (``K^m`` with a truncation level)."""
    return apply_Q(phi, params) + apply_L(phi, model, params, truncation)


def skew_symmetry_check(phi: CylPoly, psi: CylPoly, model: ModelParams, params: "GibbsParams",
                        truncation: int | None = None):
    """Residual ``E[(L phi) psi] + E[phi (L psi)]``; zero when ``L`` is skew."""
    lphi = apply_L(phi, model, params, truncation)
    lpsi = apply_L(psi, model, params, truncation)
    return gaussian_expectation(lphi * psi, params) + gaussian_expectation(phi * lpsi, params)


def monomial_basis(grid: GridParams, max_mode: int, max_degree: int, coeff=1) -> list[CylPoly]:
    """All monomials of total degree ``<= max_degree`` in modes ``1..max_mode``."""
    nvars = 2 * max_mode
    out = []
    for d in range(max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), d):
            mono = tuple(sorted(Counter(combo).items()))
            out.append(CylPoly({mono: coeff}, grid))
    return out
