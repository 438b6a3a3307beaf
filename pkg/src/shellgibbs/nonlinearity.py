"""Bilinear shell interactions (SABRA and GOY) in real coordinates.

Both models are written as four complex triad terms

    b_n(u, v) = i*sigma * sum_t  s_t c_t k_{n+dk} f_t(u_{n+du}) g_t(v_{n+dv})

with ``f, g`` either the identity or complex conjugation.  The real
components ``B_{n,1} = Re b_n`` and ``B_{n,2} = Im b_n`` are expanded from
this table mechanically (:func:`real_terms`), so the SABRA components agree
with the hand-expanded formulas and the GOY ones need no transcription.
The same table drives numerical evaluation, the symbolic polynomials used by
the generator algebra, the bilinear bound constants and the
divergence-free check.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .spectral import GridParams, ShellState, project, sobolev_norm, wavenumbers

__all__ = [
    "Variant",
    "ModelParams",
    "ComplexTerm",
    "RealTerm",
    "complex_terms",
    "real_terms",
    "BilinearForm",
    "bilinear_B",
    "truncated_B",
    "energy_pairing",
    "bilinear_bound_constant",
    "bound_terms",
    "divergence_free_check",
    "DEFAULT_MODEL",
]


class Variant(str, enum.Enum):
    SABRA = "SABRA"
    GOY = "GOY"


@dataclass(frozen=True)
class ModelParams:
    """Model choice and interaction coefficients.

    ``b_back`` overrides the coefficient of the backward ``b`` interaction
    (the ``k_{n-1} u_{n-2} v_{n-1}`` term).  It exists for fault-injection
    diagnostics: any value other than ``b`` destroys energy conservation.
    """

    variant: Variant = Variant.SABRA
    a: float = 1
    b: float = -0.5
    b_back: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        for name in ("a", "b", "b_back"):
            x = getattr(self, name)
            if x is not None and not math.isfinite(float(x)):
                raise DomainError(f"coefficient {name} must be finite, got {x!r}")
        if self.a == 0 and self.b == 0 and self.b_back in (None, 0):
            warnings.warn("a = b = 0: the nonlinearity vanishes identically", stacklevel=3)

    def coefficient(self, name: str):
        if name == "b_back":
            return self.b if self.b_back is None else self.b_back
        return getattr(self, name)


DEFAULT_MODEL = ModelParams()


@dataclass(frozen=True)
class ComplexTerm:
    coef: str
    sign: int
    dk: int
    du: int
    conj_u: bool
    dv: int
    conj_v: bool


@dataclass(frozen=True)
class RealTerm:
    """``B_{n,out_j} += sign * coef * k_{n+dk} * u_{n+du,ju} * v_{n+dv,jv}``."""

    out_j: int
    coef: str
    sign: int
    dk: int
    du: int
    ju: int
    dv: int
    jv: int


# (prefactor sign sigma in i*sigma, terms)
_COMPLEX = {
    Variant.GOY: (
        +1,
        (
            ComplexTerm("a", +1, +1, +1, True, +2, True),
            ComplexTerm("b", +1, 0, -1, True, +1, True),
            ComplexTerm("a", -1, -1, -1, True, -2, True),
            ComplexTerm("b_back", -1, -1, -2, True, -1, True),
        ),
    ),
    Variant.SABRA: (
        -1,
        (
            ComplexTerm("a", +1, +1, +1, True, +2, False),
            ComplexTerm("b", +1, 0, -1, True, +1, False),
            ComplexTerm("a", +1, -1, -1, False, -2, False),
            ComplexTerm("b_back", +1, -1, -2, False, -1, False),
        ),
    ),
}


def complex_terms(variant: Variant):
    """Return ``(sigma, terms)`` with ``b_n = i*sigma*sum(terms)``."""
    return _COMPLEX[Variant(variant)]


@lru_cache(maxsize=None)
def real_terms(variant: Variant) -> tuple[RealTerm, ...]:
    """Expand the complex table into real bilinear monomials.

    With ``f(u) = u1 + i s_u u2`` and ``g(v) = v1 + i s_v v2``
    (``s = -1`` under conjugation), ``i*sigma*f*g`` has real part
    ``-sigma (s_v u1 v2 + s_u u2 v1)`` and imaginary part
    ``sigma (u1 v1 - s_u s_v u2 v2)``.
    """
    sigma, terms = complex_terms(variant)
    out = []
    for t in terms:
        su = -1 if t.conj_u else 1
        sv = -1 if t.conj_v else 1
        s = sigma * t.sign
        out += [
            RealTerm(1, t.coef, -s * sv, t.dk, t.du, 1, t.dv, 2),
            RealTerm(1, t.coef, -s * su, t.dk, t.du, 2, t.dv, 1),
            RealTerm(2, t.coef, s, t.dk, t.du, 1, t.dv, 1),
            RealTerm(2, t.coef, -s * su * sv, t.dk, t.du, 2, t.dv, 2),
        ]
    return tuple(out)


_PAD_LEFT = 2
_PAD_RIGHT = 3


class BilinearForm:
    """Vectorised evaluator of ``B`` on a fixed grid and model.

    Arrays have trailing shape ``(M, 2)``; any leading batch shape is
    allowed.  Only elementwise arithmetic is used, so each batch row is
    computed identically whatever the batch composition.
    """

    def __init__(self, grid: GridParams, model: ModelParams):
        self.grid = grid
        self.model = model
        self.terms = real_terms(model.variant)
        M = grid.M
        n = np.arange(1, M + 2)
        self._coef = []
        for t in self.terms:
            c = t.sign * float(model.coefficient(t.coef))
            kk = float(grid.k0) * np.power(float(grid.lam), (n + t.dk).astype(np.float64))
            self._coef.append(c * kk)

    def _pad(self, x, m):
        M = self.grid.M
        if x.shape[-2] != M:
            raise DomainError(f"expected {M} modes, got {x.shape[-2]}")
        shape = x.shape[:-2] + (M + _PAD_LEFT + _PAD_RIGHT, 2)
        p = np.zeros(shape)
        p[..., _PAD_LEFT:_PAD_LEFT + m, :] = x[..., :m, :]
        return p

    def apply(self, u, v, m: int | None = None, out_modes: int | None = None):
        """Evaluate ``B(Pi_m u, Pi_m v)`` on output modes ``1..out_modes``.

        ``m`` defaults to ``M`` and ``out_modes`` to ``M + 1`` (the exact
        image).  Modes of the result above ``out_modes`` are simply not
        produced, which is the projection ``Pi_{out_modes}``.
        """
        M = self.grid.M
        m = M if m is None else m
        mo = M + 1 if out_modes is None else out_modes
        if not 1 <= m <= M or not 1 <= mo <= M + 1:
            raise DomainError("truncation levels out of range")
        U = self._pad(u, m)
        V = U if v is u else self._pad(v, m)
        out = np.zeros(U.shape[:-2] + (mo, 2))
        for t, c in zip(self.terms, self._coef):
            su = _PAD_LEFT - 1 + t.du
            sv = _PAD_LEFT - 1 + t.dv
            out[..., t.out_j - 1] += (
                c[:mo] * U[..., su + 1:su + 1 + mo, t.ju - 1] * V[..., sv + 1:sv + 1 + mo, t.jv - 1]
            )
        return out

    def galerkin(self, u, v=None, m: int | None = None):
        """``B^m(u, v)`` returned on the full ``M``-mode grid (zeros above ``m``)."""
        M = self.grid.M
        m = M if m is None else m
        v = u if v is None else v
        b = self.apply(u, v, m=m, out_modes=m)
        if m == M:
            return b
        out = np.zeros(b.shape[:-2] + (M, 2))
        out[..., :m, :] = b
        return out


@lru_cache(maxsize=64)
def _form(grid: GridParams, model: ModelParams) -> BilinearForm:
    return BilinearForm(grid, model)


def _check_pair(u: ShellState, v: ShellState):
    if u.grid != v.grid:
        raise DomainError(f"grid mismatch: {u.grid} vs {v.grid}")


def bilinear_B(u: ShellState, v: ShellState, params: ModelParams) -> ShellState:
    """Exact image ``B(u, v)`` of two truncated states.

    The backward interactions reach one shell past the grid, so the result
    lives on a grid with ``M + 1`` modes.
    """
    _check_pair(u, v)
    out = _form(u.grid, params).apply(u.modes, v.modes)
    return ShellState(u.grid.with_modes(u.grid.M + 1), out)


def truncated_B(u: ShellState, v: ShellState, m: int, params: ModelParams) -> ShellState:
    """Galerkin operator ``B^m(u, v) = Pi_m B(Pi_m u, Pi_m v)`` on the input grid."""
    _check_pair(u, v)
    if m < 3:
        raise DomainError(f"Galerkin truncation needs m >= 3, got {m}")
    if m > u.grid.M:
        raise DomainError(f"truncation level {m} exceeds grid size {u.grid.M}")
    return ShellState(u.grid, _form(u.grid, params).galerkin(u.modes, v.modes, m))


def energy_pairing(u: ShellState, v: ShellState, params: ModelParams) -> float:
    """``sum_n B_n(u, v) . v_n`` with compensated summation."""
    _check_pair(u, v)
    b = _form(u.grid, params).apply(u.modes, v.modes, out_modes=u.grid.M)
    return math.fsum((b * v.modes).ravel())


def bound_terms(alpha1: float, alpha2: float, params: ModelParams, grid: GridParams):
    """Per-monomial contributions ``|coef| * lam**(dk - alpha1*du - alpha2*dv)``.

    Each real monomial contributes a series bounded, after Cauchy-Schwarz,
    by its contribution times ``|u|_{H^alpha1} |v|_{H^alpha2} |z|_{H^alpha3}``
    with ``alpha3 = 1 - alpha1 - alpha2`` (the powers of ``k0`` cancel).
    """
    lam = float(grid.lam)
    out = []
    for t in real_terms(params.variant):
        c = abs(float(params.coefficient(t.coef)))
        out.append((t, c * lam ** (t.dk - alpha1 * t.du - alpha2 * t.dv)))
    return out


def bilinear_bound_constant(alpha1: float, alpha2: float, params: ModelParams, grid: GridParams) -> float:
    """Constant ``c`` with ``|B(u,v)|_{H^{-alpha3}} <= c |u|_{H^alpha1} |v|_{H^alpha2}``.

    Conservative: the sum of all monomial contributions from
    :func:`bound_terms`.  It does not depend on the truncation level.
    """
    return math.fsum(c for _, c in bound_terms(alpha1, alpha2, params, grid))


def divergence_free_check(params: ModelParams, grid: GridParams) -> dict:
    """Structural check that ``B_{n,j}(x, x)`` never references ``x_{n,j}``.

    Returns ``{(n, j): bool}`` for every component ``n <= M``.  Only
    monomials whose coefficient is nonzero and whose coordinates both lie on
    the grid are inspected.
    """
    M = grid.M
    report = {}
    for n in range(1, M + 1):
        for j in (1, 2):
            ok = True
            for t in real_terms(params.variant):
                if t.out_j != j or params.coefficient(t.coef) == 0:
                    continue
                iu, iv = n + t.du, n + t.dv
                if not (1 <= iu <= M and 1 <= iv <= M):
                    continue
                if (iu, t.ju) == (n, j) or (iv, t.jv) == (n, j):
                    ok = False
            report[(n, j)] = ok
    return report


def empirical_bilinear_ratio(u: ShellState, v: ShellState, alpha1, alpha2, params, m=None) -> float:
    """``|B^m(u,v)|_{H^{-alpha3}} / (|u|_{H^alpha1} |v|_{H^alpha2})`` (``m=None``: exact image)."""
    alpha3 = 1.0 - alpha1 - alpha2
    if m is None:
        b = bilinear_B(u, v, params)
    else:
        b = truncated_B(u, v, m, params)
    den = sobolev_norm(u, alpha1) * sobolev_norm(v, alpha2)
    return sobolev_norm(b, -alpha3) / den if den else 0.0


def galerkin_tail_state(u: ShellState, m: int) -> ShellState:
    """``(I - Pi_{m-2}) u``: the modes the Galerkin error depends on."""
    return u - project(u, m - 2)
