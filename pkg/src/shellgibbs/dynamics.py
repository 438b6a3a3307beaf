"""Time integration of the stochastic viscous, inviscid and epsilon-family shell flows.

Schemes
-------
OU_EXACT
    Exact Ornstein-Uhlenbeck transition per coordinate.
EXP_EULER_VISCOUS
    ``u' = e^{-nu dt A}(u - dt B^m(u, u)) + eta`` with ``eta`` the exact
    stochastic-convolution increment; the linear part is integrated exactly.
EPS_FAMILY
    The same scheme with viscosity ``nu * eps`` and noise ``sqrt(2 eps A)``.
    The coordinate noise variance is ``(1/nu)(1 - e^{-2 nu eps k^2 dt})`` so
    ``Normal(0, 1/nu)`` stays stationary for the linear part at every ``eps``.
IMPLICIT_MIDPOINT_INVISCID
    ``u' = u - dt B^m(mid, mid)`` with ``mid = (u + u')/2``, solved by
    fixed-point iteration.  Energy is conserved up to the solver tolerance
    because the increment is orthogonal to ``mid``.
RK4_INVISCID
    Classical explicit RK4 on the inviscid system; a control that does not
    conserve energy.

The drift always uses the Galerkin operator ``B^m`` (``m = M`` unless the
config says otherwise); modes above ``m`` then evolve as exact OU.

All kernels work on arrays of shape ``(N, M, 2)`` with purely row-wise
arithmetic, so a trajectory's path never depends on which other
trajectories share its batch.  Noise for trajectory ``i`` at step ``k`` is
drawn from the counter stream ``(seed, i, k)``.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BlowupError, DomainError, SchemeMismatchError, StepFailure
from .nonlinearity import BilinearForm, ModelParams, _form, bilinear_bound_constant
from .rng import PURPOSE_NOISE, CounterStream
from .spectral import GridParams, ShellState, sobolev_norm, sobolev_norm_array, wavenumbers

__all__ = [
    "Scheme",
    "SchemeConfig",
    "TrajectoryRecord",
    "EnsembleRun",
    "ou_step",
    "viscous_step",
    "inviscid_step",
    "epsilon_step",
    "rk4_step",
    "integrate",
    "evolve_ensemble",
    "local_horizon_estimate",
    "linear_coefficients",
    "step_count",
    "STATUS_OK",
    "STATUS_BLOWUP",
    "STATUS_STEP_FAILURE",
]

STATUS_OK = 0
STATUS_BLOWUP = 1
STATUS_STEP_FAILURE = 2


class Scheme(str, enum.Enum):
    OU_EXACT = "ou"
    EXP_EULER_VISCOUS = "viscous"
    IMPLICIT_MIDPOINT_INVISCID = "inviscid"
    EPS_FAMILY = "eps"
    RK4_INVISCID = "rk4"

    @property
    def noisy(self) -> bool:
        return self in (Scheme.OU_EXACT, Scheme.EXP_EULER_VISCOUS, Scheme.EPS_FAMILY)


@dataclass(frozen=True)
class SchemeConfig:
    """Step size, scheme and solver/blowup controls.

    ``galerkin_m`` selects the drift ``B^m`` (default: the grid's ``M``).
    ``max_halvings`` bounds the failure-driven step halving of the midpoint
    solver inside :func:`integrate` and :func:`evolve_ensemble`.
    """

    dt: float
    scheme: Scheme = Scheme.EXP_EULER_VISCOUS
    nu: float = 1.0
    epsilon: float = 1.0
    solver_tol: float = 1e-12
    solver_max_iters: int = 50
    blowup_norm_cap: float = 1e6
    blowup_alpha: float = 0.5
    galerkin_m: int | None = None
    max_halvings: int = 8

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise DomainError(f"dt must be positive, got {self.dt!r}")
        if not (math.isfinite(self.nu) and self.nu > 0):
            raise DomainError(f"nu must be positive, got {self.nu!r}")
        if not 0 < self.epsilon <= 1:
            raise DomainError(f"epsilon must lie in (0, 1], got {self.epsilon!r}")
        if not self.solver_tol > 0:
            raise DomainError("solver_tol must be positive")
        if self.solver_max_iters < 1 or self.max_halvings < 0:
            raise DomainError("solver_max_iters must be >= 1 and max_halvings >= 0")
        if not self.blowup_norm_cap > 0:
            raise DomainError("blowup_norm_cap must be positive")
        if self.galerkin_m is not None and self.galerkin_m < 3:
            raise DomainError(f"galerkin_m must be >= 3, got {self.galerkin_m}")

    @property
    def effective_nu(self) -> float:
        """Viscosity of the linear part: ``nu * eps`` for the epsilon family."""
        return self.nu * self.epsilon if self.scheme is Scheme.EPS_FAMILY else self.nu


@dataclass
class TrajectoryRecord:
    """Recorded path of one trajectory.

    ``status`` is ``"ok"``, ``"blowup"`` or ``"step_failure"``; on failure
    the record stops at the last valid state and ``failure_time`` is the
    time of the step that failed.
    """

    times: np.ndarray
    states: list
    diagnostics: dict
    status: str = "ok"
    failure_time: float | None = None

    @property
    def final(self) -> ShellState:
        return self.states[-1]


@dataclass
class EnsembleRun:
    """Result of :func:`evolve_ensemble`.

    ``snapshots[i]`` is the ``(N, M, 2)`` ensemble at ``times[i]`` (only when
    states are kept).  Rows that failed are frozen at their last valid state
    and flagged in ``status``.
    """

    times: np.ndarray
    snapshots: list
    final: np.ndarray
    status: np.ndarray
    failure_time: np.ndarray
    iterations: np.ndarray
    trajectory_ids: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> np.ndarray:
        return self.status == STATUS_OK

    @property
    def failure_fraction(self) -> float:
        return float(np.mean(~self.ok)) if len(self.status) else 0.0


# ---------------------------------------------------------------------------
# Kernels


def linear_coefficients(grid: GridParams, cfg: SchemeConfig, dt: float | None = None):
    """Per-mode decay ``e^{-nu_eff k^2 dt}`` and noise standard deviation.

    The variance ``(1/nu)(1 - e^{-2 nu_eff k^2 dt})`` is the Ito isometry of
    the stochastic convolution over one step.
    """
    dt = cfg.dt if dt is None else dt
    k2 = wavenumbers(grid) ** 2
    rate = cfg.effective_nu * k2 * dt
    decay = np.exp(-rate)
    sd = np.sqrt(-np.expm1(-2.0 * rate) / cfg.nu)
    return decay[:, None], sd[:, None]


def _drift_level(grid: GridParams, cfg: SchemeConfig) -> int:
    m = grid.M if cfg.galerkin_m is None else cfg.galerkin_m
    if m > grid.M:
        raise DomainError(f"galerkin_m={m} exceeds M={grid.M}")
    return m


def _stochastic_kernel(x, xi, form: BilinearForm | None, m: int, dt: float, decay, sd):
    if form is None:
        return decay * x + sd * xi
    return decay * (x - dt * form.galerkin(x, m=m)) + sd * xi


def _midpoint_kernel(form: BilinearForm, u, m: int, dt: float, tol: float, max_iters: int):
    """Fixed-point midpoint step on a batch.

    Returns ``(u_new, iterations, converged)``.  Each row iterates until its
    own increment is below ``tol * |u|_inf``; converged rows are
    frozen, so a row's result does not depend on the rest of the batch.
    """
    N = u.shape[0]
    scale = np.max(np.abs(u), axis=(1, 2))
    mid = u.copy()
    iters = np.zeros(N, dtype=np.int64)
    done = np.zeros(N, dtype=bool)
    active = np.arange(N)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iters):
            if active.size == 0:
                break
            cur = mid[active]
            new = u[active] - (0.5 * dt) * form.galerkin(cur, m=m)
            err = np.max(np.abs(new - cur), axis=(1, 2))
            mid[active] = new
            iters[active] += 1
            conv = err <= tol * scale[active]  # exact zero state converges at once
            bad = ~np.isfinite(err)
            done[active[conv]] = True
            active = active[~(conv | bad)]
    out = 2.0 * mid - u
    converged = done & np.all(np.isfinite(out), axis=(1, 2))
    return out, iters, converged


def _midpoint_with_halving(form, u, m, dt, cfg: SchemeConfig, level: int = 0):
    """Midpoint step of size ``dt``; rows that fail are redone as two half steps."""
    out, iters, ok = _midpoint_kernel(form, u, m, dt, cfg.solver_tol, cfg.solver_max_iters)
    if ok.all() or level >= cfg.max_halvings:
        return out, iters, ok
    bad = np.flatnonzero(~ok)
    sub = u[bad]
    sub_ok = np.ones(len(bad), dtype=bool)
    sub_iters = np.zeros(len(bad), dtype=np.int64)
    for _ in range(2):
        nxt, it, good = _midpoint_with_halving(form, sub, m, 0.5 * dt, cfg, level + 1)
        sub_iters += it
        sub_ok &= good
        sub = np.where(sub_ok[:, None, None], nxt, sub)
    out[bad] = sub
    iters[bad] += sub_iters
    ok[bad] = sub_ok
    return out, iters, ok


def _rk4_kernel(form: BilinearForm, u, m: int, dt: float):
    f = lambda x: -form.galerkin(x, m=m)  # noqa: E731
    k1 = f(u)
    k2 = f(u + 0.5 * dt * k1)
    k3 = f(u + 0.5 * dt * k2)
    k4 = f(u + dt * k3)
    return u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _blown_up(x, grid: GridParams, cfg: SchemeConfig):
    with np.errstate(over="ignore", invalid="ignore"):
        norms = sobolev_norm_array(x, grid, -cfg.blowup_alpha)
    return ~(np.isfinite(norms) & (norms <= cfg.blowup_norm_cap)), norms


class _Stepper:
    """Advance a batch of rows by one step of ``cfg``."""

    def __init__(self, grid: GridParams, cfg: SchemeConfig, model: ModelParams | None):
        self.grid = grid
        self.cfg = cfg
        self.m = _drift_level(grid, cfg)
        self.form = None
        if cfg.scheme is not Scheme.OU_EXACT:
            if model is None:
                raise DomainError(f"scheme {cfg.scheme.value} needs model parameters")
            self.form = _form(grid, model)
        if cfg.scheme.noisy:
            self.decay, self.sd = linear_coefficients(grid, cfg)

    def __call__(self, x, stream: CounterStream | None, step: int, halve: bool = True):
        """Return ``(x_new, iterations, ok)`` for the rows of ``x``."""
        cfg, M = self.cfg, self.grid.M
        N = x.shape[0]
        iters = np.zeros(N, dtype=np.int64)
        if cfg.scheme.noisy:
            xi = stream.normals(2 * M, step=step).reshape(N, M, 2)
            with np.errstate(over="ignore", invalid="ignore"):
                new = _stochastic_kernel(x, xi, self.form, self.m, cfg.dt, self.decay, self.sd)
            ok = np.ones(N, dtype=bool)
        elif cfg.scheme is Scheme.IMPLICIT_MIDPOINT_INVISCID:
            if halve:
                new, iters, ok = _midpoint_with_halving(self.form, x, self.m, cfg.dt, cfg)
            else:
                new, iters, ok = _midpoint_kernel(self.form, x, self.m, cfg.dt, cfg.solver_tol,
                                                  cfg.solver_max_iters)
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                new = _rk4_kernel(self.form, x, self.m, cfg.dt)
            ok = np.ones(N, dtype=bool)
        return new, iters, ok


# ---------------------------------------------------------------------------
# Single-state steps


def _require(cfg: SchemeConfig, *schemes: Scheme):
    if cfg.scheme not in schemes:
        names = ", ".join(s.name for s in schemes)
        raise SchemeMismatchError(f"config scheme is {cfg.scheme.name}, expected {names}")


def _batch_stream(stream: CounterStream) -> CounterStream:
    if not stream.scalar:
        raise DomainError("single-state steps need a scalar (one-trajectory) stream")
    return stream


def _single_noisy_step(u: ShellState, cfg, model, stream):
    _batch_stream(stream)
    step = stream.step
    stream.step += 1
    sub = CounterStream(stream.seed, np.array([int(stream.trajectories[0])]), stream.purpose)
    new, _, _ = _Stepper(u.grid, cfg, model)(u.modes[None], sub, step)
    blown, norms = _blown_up(new, u.grid, cfg)
    if blown[0]:
        raise BlowupError(f"H^-{cfg.blowup_alpha} norm {norms[0]:.3g} exceeds cap", state=u, norm=norms[0])
    return ShellState(u.grid, new[0])


def ou_step(z: ShellState, cfg: SchemeConfig, rng_stream: CounterStream) -> ShellState:
    """One exact OU transition ``z' = e^{-nu k^2 dt} z + xi``."""
    _require(cfg, Scheme.OU_EXACT)
    return _single_noisy_step(z, cfg, None, rng_stream)


def viscous_step(u: ShellState, cfg: SchemeConfig, model: ModelParams, rng_stream: CounterStream) -> ShellState:
    """One exponential-Euler step of the stochastic viscous flow."""
    _require(cfg, Scheme.EXP_EULER_VISCOUS)
    return _single_noisy_step(u, cfg, model, rng_stream)


def epsilon_step(u: ShellState, cfg: SchemeConfig, model: ModelParams, rng_stream: CounterStream) -> ShellState:
    """One exponential-Euler step of the epsilon family."""
    _require(cfg, Scheme.EPS_FAMILY)
    return _single_noisy_step(u, cfg, model, rng_stream)


def inviscid_step(u: ShellState, cfg: SchemeConfig, model: ModelParams) -> ShellState:
    """One implicit-midpoint step; raises :class:`StepFailure` if the solver stalls.

    No halving happens here; :func:`integrate` retries failed steps with
    halved sub-steps.
    """
    _require(cfg, Scheme.IMPLICIT_MIDPOINT_INVISCID)
    new, iters, ok = _Stepper(u.grid, cfg, model)(u.modes[None], None, 0, halve=False)
    if not ok[0]:
        raise StepFailure(f"midpoint iteration did not converge in {cfg.solver_max_iters} iterations", state=u)
    blown, norms = _blown_up(new, u.grid, cfg)
    if blown[0]:
        raise BlowupError(f"H^-{cfg.blowup_alpha} norm {norms[0]:.3g} exceeds cap", state=u, norm=norms[0])
    return ShellState(u.grid, new[0])


def rk4_step(u: ShellState, cfg: SchemeConfig, model: ModelParams) -> ShellState:
    """Explicit RK4 step of the inviscid system (non-conservative control)."""
    _require(cfg, Scheme.RK4_INVISCID)
    new, _, _ = _Stepper(u.grid, cfg, model)(u.modes[None], None, 0)
    return ShellState(u.grid, new[0])


# ---------------------------------------------------------------------------
# Drivers


def step_count(t_end: float, dt: float) -> int:
    """Number of uniform steps; ``t_end`` must be a multiple of ``dt``."""
    if t_end < 0:
        raise DomainError(f"t_end must be >= 0, got {t_end}")
    n = int(round(t_end / dt))
    if abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise DomainError(f"t_end={t_end} is not a multiple of dt={dt}")
    return n


def evolve_ensemble(x0: np.ndarray, grid: GridParams, cfg: SchemeConfig, model: ModelParams | None,
                    t_end: float, seed: int = 0, trajectory_ids=None, record_every: int | None = None,
                    keep_states: bool = True, threads: int = 1, chunk: int = 1024,
                    callback=None) -> EnsembleRun:
    """Integrate an ensemble of initial states over ``[0, t_end]``.

    Parameters
    ----------
    x0 : ndarray, shape (N, M, 2)
    trajectory_ids : array of int, optional
        Stream ids of the rows (default ``0..N-1``); row ``i`` draws its noise
        from ``(seed, trajectory_ids[i], step)``.
    record_every : int, optional
        Record every this many steps (default: only the start and the end).
    keep_states : bool
        Keep full snapshots at recorded times.  ``callback(time, x, status)``
        is called at each recorded time in any case.
    threads : int
        Worker threads.  Rows are split into fixed ``chunk``-sized blocks; the
        result is bitwise independent of ``threads`` and ``chunk``.
    """
    x = np.array(x0, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (grid.M, 2):
        raise DomainError(f"x0 must have shape (N, {grid.M}, 2)")
    N = x.shape[0]
    ids = np.arange(N) if trajectory_ids is None else np.asarray(trajectory_ids, dtype=np.int64)
    n_steps = step_count(t_end, cfg.dt)
    every = max(1, n_steps) if not record_every else int(record_every)
    stepper = _Stepper(grid, cfg, model)
    stream = CounterStream(seed, ids, PURPOSE_NOISE) if cfg.scheme.noisy else None
    status = np.zeros(N, dtype=np.int8)
    fail_t = np.full(N, np.nan)
    iters = np.zeros(N, dtype=np.int64)
    blocks = [np.arange(lo, min(N, lo + chunk)) for lo in range(0, N, chunk)]

    times, snaps = [], []

    def record(k):
        t = k * cfg.dt
        times.append(t)
        if keep_states:
            snaps.append(x.copy())
        if callback is not None:
            callback(t, x, status)

    def advance(rows, k):
        live = rows[status[rows] == STATUS_OK]
        if live.size == 0:
            return
        sub = stream.subset(live) if stream is not None else None
        new, it, ok = stepper(x[live], sub, k)
        blown, _ = _blown_up(new, grid, cfg)
        failed = ~ok
        blown &= ok
        good = ok & ~blown
        x[live[good]] = new[good]
        iters[live] += it
        status[live[failed]] = STATUS_STEP_FAILURE
        status[live[blown]] = STATUS_BLOWUP
        fail_t[live[~good]] = (k + 1) * cfg.dt

    record(0)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 and len(blocks) > 1 else None
    try:
        for k in range(n_steps):
            if pool is None:
                for rows in blocks:
                    advance(rows, k)
            else:
                list(pool.map(lambda r: advance(r, k), blocks))
            if (k + 1) % every == 0 or k + 1 == n_steps:
                record(k + 1)
    finally:
        if pool is not None:
            pool.shutdown()
    return EnsembleRun(np.asarray(times), snaps, x, status, fail_t, iters, ids)


def _diagnostics(x, grid: GridParams, alpha: float):
    energy = 0.5 * np.sum(x * x, axis=(-1, -2))
    return energy, sobolev_norm_array(x, grid, -alpha)


def integrate(u0: ShellState, cfg: SchemeConfig, model: ModelParams | None, t_end: float,
              rng_stream: CounterStream | None = None, record_every: int = 1) -> TrajectoryRecord:
    """Integrate one trajectory, recording every ``record_every`` steps.

    Noise comes from ``rng_stream`` starting at its current step; the stream
    is advanced by the number of steps taken.  On blowup or solver failure
    the partial record is returned with ``status`` and ``failure_time`` set.
    """
    grid = u0.grid
    if cfg.scheme.noisy:
        if rng_stream is None:
            raise DomainError(f"scheme {cfg.scheme.value} needs a noise stream")
        _batch_stream(rng_stream)
    n_steps = step_count(t_end, cfg.dt)
    stepper = _Stepper(grid, cfg, model)
    x = u0.modes[None].copy()
    sub = None
    if rng_stream is not None:
        sub = CounterStream(rng_stream.seed, np.array([int(rng_stream.trajectories[0])]), rng_stream.purpose)
    start = rng_stream.step if rng_stream is not None else 0
    times, states, its = [0.0], [u0], [0]
    status, fail_t = "ok", None
    for k in range(n_steps):
        new, it, ok = stepper(x, sub, start + k)
        if not ok[0]:
            status, fail_t = "step_failure", (k + 1) * cfg.dt
            break
        blown, _ = _blown_up(new, grid, cfg)
        if blown[0]:
            status, fail_t = "blowup", (k + 1) * cfg.dt
            break
        x = new
        if (k + 1) % record_every == 0 or k + 1 == n_steps:
            times.append((k + 1) * cfg.dt)
            states.append(ShellState(grid, x[0]))
            its.append(int(it[0]))
    if rng_stream is not None:
        rng_stream.step = start + n_steps
    arr = np.stack([s.modes for s in states])
    energy, norm = _diagnostics(arr, grid, cfg.blowup_alpha)
    diag = {"energy": energy, f"h_minus_{cfg.blowup_alpha}": norm, "iterations": np.asarray(its)}
    return TrajectoryRecord(np.asarray(times), states, diag, status, fail_t)


def local_horizon_estimate(u0: ShellState, z_norm: float, cfg: SchemeConfig, model: ModelParams,
                           alpha: float):
    """Radius ``R`` and horizon ``tau`` of the local mild-solution argument.

    ``C0 = c_B * ((1+alpha)/(2 e nu))^{(1+alpha)/2} * 2/(1-alpha)`` where
    ``c_B`` bounds ``|B(u,u)|_{H^{-1-2 alpha}} <= c_B |u|^2_{H^{-alpha}}``;
    then ``R = 3(|x| + |z0|)`` and ``tau = [8 C0 (|x| + |z0|)]^{2/(alpha-1)}``
    with norms in ``H^{-alpha}``.  Zero data gives ``tau = inf``.
    Diagnostic only.
    """
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    c_b = bilinear_bound_constant(-alpha, -alpha, model, u0.grid)
    p = 0.5 * (1.0 + alpha)
    c_semi = (p / (math.e * cfg.nu)) ** p
    c0 = c_b * c_semi * 2.0 / (1.0 - alpha)
    s = sobolev_norm(u0, -alpha) + float(z_norm)
    if s == 0 or c0 == 0:
        return 3.0 * s, math.inf
    return 3.0 * s, (8.0 * c0 * s) ** (2.0 / (alpha - 1.0))


def with_scheme(cfg: SchemeConfig, scheme: Scheme, **changes) -> SchemeConfig:
    return replace(cfg, scheme=Scheme(scheme), **changes)
