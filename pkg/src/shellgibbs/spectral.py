"""Shell geometry, truncated Sobolev norms and the diagonal operator A.

A shell state holds ``M`` complex amplitudes as real pairs; mode ``n``
(1-based) lives at row ``n - 1`` of a ``(M, 2)`` array.  Every quantity here
is a finite ``M``-term sum.  The vectorised helpers (``*_array``) accept any
leading batch shape ``(..., M, 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational

import numpy as np

from .errors import DomainError, RangeError

__all__ = [
    "GridParams",
    "ShellState",
    "wavenumber",
    "wavenumbers",
    "exact_wavenumber",
    "sobolev_norm",
    "sobolev_norm_array",
    "apply_A_power",
    "trace_A_power",
    "semigroup_apply",
    "semigroup_factors",
    "project",
    "DEFAULT_GRID",
]


@dataclass(frozen=True)
class GridParams:
    """Wavenumber geometry ``k_n = k0 * lam**n`` for ``n = 1..M``."""

    k0: float = 1
    lam: float = 2
    M: int = 32

    def __post_init__(self):
        if not (math.isfinite(float(self.k0)) and self.k0 > 0):
            raise DomainError(f"k0 must be positive, got {self.k0!r}")
        if not (math.isfinite(float(self.lam)) and self.lam > 1):
            raise DomainError(f"lambda must exceed 1, got {self.lam!r}")
        if int(self.M) != self.M or self.M < 3:
            raise DomainError(f"M must be an integer >= 3, got {self.M!r}")
        object.__setattr__(self, "M", int(self.M))

    @property
    def is_rational(self) -> bool:
        return all(isinstance(x, Rational) and not isinstance(x, bool) for x in (self.k0, self.lam))

    def with_modes(self, M: int) -> "GridParams":
        return GridParams(self.k0, self.lam, M)

    @property
    def k(self) -> np.ndarray:
        """Wavenumbers ``k_1..k_M`` as floats."""
        return wavenumbers(self)


DEFAULT_GRID = GridParams()


def wavenumber(grid: GridParams, n: int) -> float:
    """Return ``k_n = k0 * lam**n`` from the closed form."""
    if n < 1:
        raise DomainError(f"shell index must be >= 1, got {n}")
    return float(grid.k0) * float(grid.lam) ** n


def exact_wavenumber(grid: GridParams, n: int):
    """``k_n`` as a Fraction (any float input is converted exactly).

    Index 0 is allowed and gives ``k0``; it appears as a coefficient of
    terms whose companion amplitude is zero.
    """
    if n < 0:
        raise DomainError(f"shell index must be >= 0, got {n}")
    return Fraction(grid.k0) * Fraction(grid.lam) ** n


def wavenumbers(grid: GridParams, start: int = 1, stop: int | None = None) -> np.ndarray:
    """Vector of ``k_n`` for ``n = start..stop`` (inclusive, default ``M``)."""
    stop = grid.M if stop is None else stop
    n = np.arange(start, stop + 1, dtype=np.float64)
    return float(grid.k0) * np.power(float(grid.lam), n)


@dataclass(frozen=True)
class ShellState:
    """Finite shell amplitudes ``(u_{n,1}, u_{n,2}) = (Re u_n, Im u_n)``.

    The boundary convention ``u_{-1} = u_0 = 0`` and ``u_n = 0`` for
    ``n > M`` is implicit.
    """

    grid: GridParams
    modes: np.ndarray = field(repr=False)

    def __post_init__(self):
        modes = np.array(self.modes, dtype=np.float64)
        if modes.shape != (self.grid.M, 2):
            raise DomainError(f"modes must have shape ({self.grid.M}, 2), got {modes.shape}")
        if not np.all(np.isfinite(modes)):
            raise DomainError("shell amplitudes must be finite")
        modes.setflags(write=False)
        object.__setattr__(self, "modes", modes)

    @classmethod
    def zeros(cls, grid: GridParams) -> "ShellState":
        return cls(grid, np.zeros((grid.M, 2)))

    @classmethod
    def from_complex(cls, grid: GridParams, values) -> "ShellState":
        values = np.asarray(values, dtype=np.complex128)
        return cls(grid, np.stack([values.real, values.imag], axis=-1))

    @classmethod
    def from_row(cls, grid: GridParams, row) -> "ShellState":
        """Inverse of :meth:`as_row`."""
        return cls(grid, np.asarray(row, dtype=np.float64).reshape(grid.M, 2))

    def as_complex(self) -> np.ndarray:
        return self.modes[:, 0] + 1j * self.modes[:, 1]

    def as_row(self) -> np.ndarray:
        """Flat ``(u_{1,1}, u_{1,2}, u_{2,1}, ...)`` serialisation order."""
        return self.modes.reshape(-1).copy()

    def __add__(self, other: "ShellState") -> "ShellState":
        _same_grid(self, other)
        return ShellState(self.grid, self.modes + other.modes)

    def __sub__(self, other: "ShellState") -> "ShellState":
        _same_grid(self, other)
        return ShellState(self.grid, self.modes - other.modes)

    def scale(self, c: float) -> "ShellState":
        return ShellState(self.grid, c * self.modes)

    def energy(self) -> float:
        """``E = 1/2 sum |u_n|^2``."""
        return 0.5 * math.fsum(np.square(self.modes).ravel())


def _same_grid(u: ShellState, v: ShellState):
    if u.grid != v.grid:
        raise DomainError(f"grid mismatch: {u.grid} vs {v.grid}")


def sobolev_norm_array(x: np.ndarray, grid: GridParams, alpha: float) -> np.ndarray:
    """Batched ``H^alpha`` norm over the trailing ``(M, 2)`` axes."""
    M = x.shape[-2]
    w = np.power(wavenumbers(grid, 1, M), 2.0 * alpha)
    return np.sqrt(np.sum(w * np.sum(x * x, axis=-1), axis=-1))


def sobolev_norm(u: ShellState, alpha: float) -> float:
    """``sqrt(sum_n k_n^{2 alpha} |u_n|^2)`` over the stored modes."""
    w = np.power(u.grid.k, 2.0 * alpha)
    if not np.all(np.isfinite(w)):
        raise RangeError(f"k_n^(2*{alpha}) overflows on this grid")
    return math.sqrt(math.fsum(w * np.sum(u.modes * u.modes, axis=-1)))


def apply_A_power(u: ShellState, p: float) -> ShellState:
    """Diagonal action ``(A^p u)_n = k_n^{2p} u_n``."""
    with np.errstate(over="ignore"):
        f = np.power(u.grid.k, 2.0 * p)
        out = f[:, None] * u.modes
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(out))):
        raise RangeError(f"A^{p} overflows double precision on M={u.grid.M}")
    return ShellState(u.grid, out)


def trace_A_power(grid: GridParams, p: float, partial: bool = False) -> float:
    """Trace of ``A^p`` for ``p < 0``.

    With ``partial=False`` the full geometric series
    ``k0^{2p} lam^{2p} / (1 - lam^{2p})``; with ``partial=True`` the sum over
    the ``M`` stored shells.
    """
    if not p < 0:
        raise DomainError(f"Tr(A^p) diverges for p >= 0 (got p={p})")
    q = float(grid.lam) ** (2.0 * p)
    if partial:
        return math.fsum(np.power(grid.k, 2.0 * p))
    return float(grid.k0) ** (2.0 * p) * q / (1.0 - q)


def semigroup_factors(grid: GridParams, t: float, nu: float, M: int | None = None) -> np.ndarray:
    """Per-mode ``exp(-nu k_n^2 t)``."""
    k = wavenumbers(grid, 1, grid.M if M is None else M)
    return np.exp(-nu * k * k * t)


def semigroup_apply(u: ShellState, t: float, nu: float) -> ShellState:
    """Dissipative semigroup ``e^{-nu t A} u``."""
    if t < 0:
        raise DomainError(f"semigroup time must be >= 0, got {t}")
    if not nu > 0:
        raise DomainError(f"nu must be positive, got {nu}")
    if t == 0:
        return u
    return ShellState(u.grid, semigroup_factors(u.grid, t, nu)[:, None] * u.modes)


def project(u: ShellState, m: int) -> ShellState:
    """Galerkin projection: keep modes ``1..m``, zero the rest."""
    if m < 1:
        raise DomainError(f"projection level must be >= 1, got {m}")
    if m >= u.grid.M:
        return u
    out = u.modes.copy()
    out[m:] = 0.0
    return ShellState(u.grid, out)
