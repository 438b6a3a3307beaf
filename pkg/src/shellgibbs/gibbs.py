"""The Gaussian Gibbs measure of the energy and its moment formulas.

Under ``mu^nu`` every real coordinate ``x_{n,j}`` is an independent
``Normal(0, 1/nu)`` variable.  This module samples it through the
counter-based streams of :mod:`shellgibbs.rng`, evaluates closed-form and
Wick-exact moments, and tests whether an ensemble of states looks like a
sample from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

from .errors import DomainError
from .generators import b_polynomial, gaussian_expectation
from .nonlinearity import ModelParams, _form
from .rng import PURPOSE_AUX, PURPOSE_INITIAL, CounterStream
from .spectral import DEFAULT_GRID, GridParams, ShellState, wavenumbers

__all__ = [
    "GibbsParams",
    "EnsembleReport",
    "MomentEstimate",
    "sample_gibbs",
    "sample_gibbs_ensemble",
    "expected_sobolev_sq",
    "b_moment_exact",
    "b_moment_bound",
    "b_moment_monte_carlo",
    "b_norm_moment",
    "marginal_gof_test",
    "neighbour_pairs",
    "DIVERGENT",
]

DIVERGENT = math.inf
FAMILY_ALPHA = 0.01
MIN_SAMPLES = 100


@dataclass(frozen=True)
class GibbsParams:
    """``mu^nu`` on a grid: each coordinate ``Normal(0, 1/nu)``."""

    nu: float = 1.0
    grid: GridParams = DEFAULT_GRID

    def __post_init__(self):
        if not (math.isfinite(float(self.nu)) and self.nu > 0):
            raise DomainError(f"nu must be positive, got {self.nu!r}")

    @property
    def sd(self) -> float:
        return 1.0 / math.sqrt(float(self.nu))


@dataclass
class EnsembleReport:
    """Per-mode statistics of an ensemble and the verdicts of the marginal tests.

    ``test_verdicts`` holds the raw p-values, the Bonferroni threshold and
    the list of failing tests; ``passed`` is the family-level verdict.
    """

    sample_count: int
    per_mode_mean: np.ndarray
    per_mode_variance: np.ndarray
    cross_covariances: list
    test_verdicts: dict
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.test_verdicts["passed"])

    @property
    def failures(self) -> list:
        return list(self.test_verdicts["failures"])

    def to_json_obj(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "per_mode_mean": self.per_mode_mean.tolist(),
            "per_mode_variance": self.per_mode_variance.tolist(),
            "cross_covariances": self.cross_covariances,
            "test_verdicts": self.test_verdicts,
            "seed": self.seed,
            "passed": self.passed,
            **self.extra,
        }


class MomentEstimate(NamedTuple):
    value: float
    stderr: float
    samples: int  # 0 for exact values


# ---------------------------------------------------------------------------
# Sampling


def sample_gibbs(params: GibbsParams, rng_stream: CounterStream):
    """Draw from ``mu^nu`` using the next step of ``rng_stream``.

    A scalar stream yields a :class:`ShellState`; a batch stream yields an
    array of shape ``(n_trajectories, M, 2)``.
    """
    M = params.grid.M
    z = rng_stream.normals(2 * M) * params.sd
    if rng_stream.scalar:
        return ShellState(params.grid, z.reshape(M, 2))
    return z.reshape(len(rng_stream), M, 2)


def sample_gibbs_ensemble(params: GibbsParams, seed: int, count: int, start: int = 0,
                          chunk: int = 65536) -> np.ndarray:
    """``count`` independent draws, trajectory ids ``start .. start+count-1``.

    Draw ``i`` depends only on ``(seed, start + i)``, so any split of the id
    range gives the same rows.
    """
    M = params.grid.M
    out = np.empty((count, M, 2))
    for lo in range(0, count, chunk):
        hi = min(count, lo + chunk)
        ids = np.arange(start + lo, start + hi)
        stream = CounterStream(seed, ids, PURPOSE_INITIAL)
        out[lo:hi] = stream.normals(2 * M, step=0).reshape(hi - lo, M, 2) * params.sd
    return out


# ---------------------------------------------------------------------------
# Closed-form moments


def expected_sobolev_sq(params: GibbsParams, alpha: float, truncated: bool = True) -> float:
    """``E ||x||^2_{H^alpha} = (2/nu) sum_n k_n^{2 alpha}``.

    ``truncated=True`` sums over the ``M`` stored shells.  Otherwise the full
    geometric series is returned, or :data:`DIVERGENT` (``inf``) when
    ``alpha >= 0``.
    """
    grid = params.grid
    if truncated:
        return 2.0 / params.nu * math.fsum(np.power(wavenumbers(grid), 2.0 * alpha))
    if alpha >= 0:
        return DIVERGENT
    q = float(grid.lam) ** (2.0 * alpha)
    return 2.0 / params.nu * float(grid.k0) ** (2.0 * alpha) * q / (1.0 - q)


def _check_shell(n: int, M: int, boundary: bool):
    if boundary:
        if not 1 <= n <= M:
            raise DomainError(f"shell {n} outside 1..{M}")
    elif not 3 <= n <= M - 2:
        raise DomainError(
            f"shell {n} is not interior (3..{M - 2}); pass boundary=True for the reduced term set"
        )


def b_moment_exact(n: int, params: GibbsParams, model: ModelParams, boundary: bool = False,
                   exact: bool = False):
    """Wick-exact ``E |B_n(x, x)|^2`` under ``mu^nu``.

    The square of the symbolic ``B^M_{n,1}`` and ``B^M_{n,2}`` is integrated
    in rational arithmetic.  For interior shells (``3 <= n <= M-2``) this is
    the full ``B``; ``boundary=True`` admits ``n`` in ``1..M`` with the terms
    that survive the truncation.  ``exact=True`` returns a ``Fraction``.
    """
    grid = params.grid
    _check_shell(n, grid.M, boundary)
    total = Fraction(0)
    for j in (1, 2):
        p = b_polynomial(n, j, model, grid, truncation=grid.M, exact=True)
        total += gaussian_expectation(p * p, params)
    return total if exact else float(total)


def b_moment_bound(n: int, params: GibbsParams, model: ModelParams) -> float:
    """Published upper bound ``(16/nu^2) k0^2 (a^2 lam^4 + b^2 lam^2 + (a+b)^2) lam^{2(n-1)}``."""
    g = params.grid
    a, b, lam = float(model.a), float(model.b), float(g.lam)
    return (16.0 / params.nu**2 * float(g.k0) ** 2
            * (a * a * lam**4 + b * b * lam**2 + (a + b) ** 2) * lam ** (2 * (n - 1)))


def b_moment_monte_carlo(n: int, params: GibbsParams, model: ModelParams, samples: int, seed: int,
                         chunk: int = 100_000) -> MomentEstimate:
    """Monte Carlo ``E |B^M_n(x, x)|^2`` with its standard error."""
    grid = params.grid
    if not 1 <= n <= grid.M:
        raise DomainError(f"shell {n} outside 1..{grid.M}")
    form = _form(grid, model)
    vals = np.empty(samples)
    for lo in range(0, samples, chunk):
        hi = min(samples, lo + chunk)
        x = sample_gibbs_ensemble(params, seed, hi - lo, start=lo)
        b = form.galerkin(x)[:, n - 1, :]
        vals[lo:hi] = np.sum(b * b, axis=-1)
    return MomentEstimate(float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(samples)), samples)


def b_norm_moment(params: GibbsParams, model: ModelParams, alpha: float, p: int = 2,
                  samples: int = 20_000, seed: int = 0) -> MomentEstimate:
    """``E ||B^M(x, x)||^p_{H^{-1-alpha}}``.

    ``p = 2`` is exact (Wick moments summed with weights ``k_n^{-2-2 alpha}``,
    boundary shells with their reduced term sets).  Larger even ``p`` is a
    Monte Carlo estimate.
    """
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if p < 2 or p % 2:
        raise DomainError(f"p must be an even integer >= 2, got {p}")
    grid = params.grid
    w = np.power(wavenumbers(grid), -2.0 - 2.0 * alpha)
    if p == 2:
        m = [b_moment_exact(n, params, model, boundary=True) for n in range(1, grid.M + 1)]
        return MomentEstimate(math.fsum(w * np.asarray(m)), 0.0, 0)
    form = _form(grid, model)
    x = sample_gibbs_ensemble(params, seed, samples)
    b = form.galerkin(x)
    norm_sq = np.sum(w * np.sum(b * b, axis=-1), axis=-1)
    vals = norm_sq ** (p // 2)
    return MomentEstimate(float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(samples)), samples)


# ---------------------------------------------------------------------------
# Marginal goodness of fit


def neighbour_pairs(M: int) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Coordinate pairs whose covariance is tested: within a shell and between neighbours."""
    pairs = []
    for n in range(1, M + 1):
        pairs.append(((n, 1), (n, 2)))
        if n < M:
            pairs.append(((n, 1), (n + 1, 1)))
            pairs.append(((n, 2), (n + 1, 2)))
    return pairs


def gof_family_size(M: int) -> int:
    """Number of tests run by :func:`marginal_gof_test` on ``M`` shells."""
    return 2 * M + M + len(neighbour_pairs(M))


def _as_array(samples, M) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        x = samples
    else:
        x = np.stack([s.modes if isinstance(s, ShellState) else np.asarray(s) for s in samples])
    if x.ndim != 3 or x.shape[1:] != (M, 2):
        raise DomainError(f"samples must have shape (N, {M}, 2), got {x.shape}")
    return x


def marginal_gof_test(samples, params: GibbsParams, family_size: int | None = None,
                      family_alpha: float = FAMILY_ALPHA, seed: int | None = None) -> EnsembleReport:
    """Test an ensemble against ``mu^nu``.

    Runs, on the standardised coordinates ``sqrt(nu) x``:

    * a Kolmogorov-Smirnov test per coordinate against ``Normal(0, 1)``;
    * a two-sided chi-square test per shell on ``nu sum |x_n|^2 ~ chi2(2N)``;
    * a z-test of zero covariance for each pair in :func:`neighbour_pairs`.

    Every p-value is compared with ``family_alpha / family_size``
    (Bonferroni).  ``family_size`` defaults to the number of tests run here;
    callers that combine several reports into one family pass the total.
    """
    grid = params.grid
    M = grid.M
    x = _as_array(samples, M)
    N = x.shape[0]
    if N < MIN_SAMPLES:
        raise DomainError(f"need at least {MIN_SAMPLES} samples, got {N}")
    z = x * math.sqrt(float(params.nu))
    family_size = gof_family_size(M) if family_size is None else int(family_size)
    threshold = family_alpha / family_size
    failures = []

    ks = stats.kstest(z.reshape(N, 2 * M), "norm", axis=0)
    ks_p = np.asarray(ks.pvalue).reshape(M, 2)
    for n in range(M):
        for j in range(2):
            if ks_p[n, j] < threshold:
                failures.append(f"ks x{n + 1},{j + 1}: p={ks_p[n, j]:.3g}")

    s = np.sum(z * z, axis=(0, 2))
    dof = 2 * N
    chi_p = np.minimum(1.0, 2.0 * np.minimum(stats.chi2.cdf(s, dof), stats.chi2.sf(s, dof)))
    for n in range(M):
        if chi_p[n] < threshold:
            failures.append(f"variance shell {n + 1}: ratio={s[n] / dof:.4f} p={chi_p[n]:.3g}")

    cov = []
    for (n1, j1), (n2, j2) in neighbour_pairs(M):
        prod = z[:, n1 - 1, j1 - 1] * z[:, n2 - 1, j2 - 1]
        zstat = math.sqrt(N) * float(np.mean(prod))  # null variance of the product is 1
        p = float(2.0 * stats.norm.sf(abs(zstat)))
        cov.append({"pair": [[n1, j1], [n2, j2]], "cov": float(np.mean(prod)) / float(params.nu),
                    "z": zstat, "p": p})
        if p < threshold:
            failures.append(f"covariance x{n1},{j1} x{n2},{j2}: z={zstat:.2f}")

    verdicts = {
        "family_alpha": family_alpha,
        "family_size": family_size,
        "threshold": threshold,
        "ks_pvalues": ks_p.tolist(),
        "variance_pvalues": chi_p.tolist(),
        "min_pvalue": float(min(ks_p.min(), chi_p.min(), min(c["p"] for c in cov))),
        "failures": failures,
        "passed": not failures,
    }
    return EnsembleReport(
        sample_count=N,
        per_mode_mean=np.mean(x, axis=0),
        per_mode_variance=np.var(x, axis=0, ddof=1),
        cross_covariances=cov,
        test_verdicts=verdicts,
        seed=seed,
    )


def sup_norm_escape(params: GibbsParams, c: float, samples: int, seed: int) -> float:
    """Fraction of draws with ``max_n |x_n| < c``; tends to 0 as ``M`` grows."""
    x = sample_gibbs_ensemble(params, seed, samples)
    return float(np.mean(np.max(np.hypot(x[..., 0], x[..., 1]), axis=-1) < c))


def aux_stream(seed: int, trajectories) -> CounterStream:
    """Stream for auxiliary draws (test fixtures, random probes)."""
    return CounterStream(seed, trajectories, PURPOSE_AUX)
