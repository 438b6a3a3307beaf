"""Command-line front end: ``shellgibbs {sample-gibbs, run, verify}``.

Configuration is a flat ``key = value`` file (``--config``) plus repeated
``--set key=value`` overrides; dedicated flags win over both.  Each
invocation writes into ``<out>/<experiment>-<seed>-<hash>`` where the hash
covers every setting that can change the output (worker count excluded).

Exit codes: 0 pass, 1 verification failure, 2 configuration error,
3 I/O error, 4 blowup or solver failure during ``run``.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ShellGibbsError
from .records import (
    to_json_text,
    write_manifest,
    write_report,
    write_states_csv,
    write_table_csv,
    write_trajectory_csv,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO, EXIT_BLOWUP = 0, 1, 2, 3, 4
EXPERIMENTS = ("invariance", "generators", "bm-convergence", "eps-limit", "m-refinement", "energy")
FLOWS = ("ou", "viscous", "inviscid", "eps", "rk4")
THREADS_ENV = "SHELLGIBBS_DEFAULT_THREADS"


class ConfigError(Exception):
    pass


def _real(v: str) -> float:
    v = v.strip()
    if "/" in v:
        return float(Fraction(v))
    return float(v)


def _int(v: str) -> int:
    return int(v.strip())


def _opt_int(v: str):
    return None if v.strip().lower() in ("", "none") else _int(v)


def _opt_real(v: str):
    return None if v.strip().lower() in ("", "none") else _real(v)


def _reals(v: str) -> tuple:
    return tuple(_real(x) for x in v.split(",") if x.strip())


def _ints(v: str) -> tuple:
    return tuple(_int(x) for x in v.split(",") if x.strip())


def _str(v: str) -> str:
    return v.strip()


# key -> (parser, default); documented in the README
KEYS = {
    "seed": (_int, 0),
    "nu": (_real, 1.0),
    "k0": (_real, 1.0),
    "lam": (_real, 2.0),
    "M": (_int, 32),
    "variant": (_str, "SABRA"),
    "a": (_real, 1.0),
    "b": (_real, -0.5),
    "b_back": (_opt_real, None),
    "n": (_int, None),
    "flow": (_str, "viscous"),
    "t_end": (_real, None),
    "dt": (_real, None),
    "epsilon": (_real, 1.0),
    "epsilon_list": (_reals, (1.0, 0.1, 0.01)),
    "eps_dt_scale": (_opt_real, None),
    "alpha": (_real, 0.5),
    "alpha_list": (_reals, (-0.5, -1.0)),
    "m_list": (_ints, None),
    "record_every": (_opt_int, None),
    "init": (_str, "gibbs"),
    "amplitude": (_real, 0.01),
    "solver_tol": (_real, 1e-12),
    "solver_max_iters": (_int, 50),
    "blowup_norm_cap": (_real, 1e6),
    "galerkin_m": (_opt_int, None),
    "max_halvings": (_int, 8),
    "max_degree": (_int, 4),
    "max_mode": (_opt_int, None),
    "skew_pairs": (_int, 2000),
    "count": (_int, None),
    "steps": (_int, 10_000),
    "holder_trajectories": (_int, 1000),
    "dump_states": (_int, 0),
    "threads": (_str, None),
    "format": (_str, "both"),
    "output_dir": (_str, "runs"),
}

# settings that never change outputs and stay out of the run hash
NON_HASHED = ("threads", "output_dir")

EXPERIMENT_DEFAULTS = {
    "sample-gibbs": {"n": 1000},
    "run": {"n": 1, "t_end": 1.0, "dt": 1e-3, "record_every": 10},
    "invariance": {"n": 10_000, "t_end": 1.0, "dt": 1e-3},
    "generators": {},
    "bm-convergence": {"count": 1000},
    "eps-limit": {"n": 4000, "t_end": 0.1, "dt": 1e-4, "eps_dt_scale": 1e-3},
    "m-refinement": {"n": 100, "t_end": 0.1, "dt": 1e-3},
    "energy": {"dt": 1e-3, "count": 4},
}


def parse_config_text(text: str, source: str = "config") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        raw[k.strip()] = v.strip()
    return raw


def resolve_config(command: str, raw: dict) -> dict:
    """Merge defaults, per-command defaults and raw string settings; reject unknown keys."""
    unknown = sorted(set(raw) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = {k: d for k, (_, d) in KEYS.items()}
    cfg.update(EXPERIMENT_DEFAULTS.get(command, {}))
    for k, v in raw.items():
        try:
            cfg[k] = KEYS[k][0](v) if isinstance(v, str) else v
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad value for {k}: {v!r} ({exc})") from None
    if cfg["format"] not in ("csv", "json", "both"):
        raise ConfigError(f"format must be csv, json or both, got {cfg['format']!r}")
    if cfg["flow"] not in FLOWS:
        raise ConfigError(f"flow must be one of {', '.join(FLOWS)}, got {cfg['flow']!r}")
    if cfg["init"] not in ("gibbs", "geometric"):
        raise ConfigError(f"init must be gibbs or geometric, got {cfg['init']!r}")
    if cfg["variant"].upper() not in ("SABRA", "GOY"):
        raise ConfigError(f"variant must be SABRA or GOY, got {cfg['variant']!r}")
    cfg["variant"] = cfg["variant"].upper()
    if not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must fit in 64 unsigned bits")
    cfg["threads"] = _threads(cfg["threads"])
    return cfg


def _threads(value) -> int:
    if value is None:
        value = os.environ.get(THREADS_ENV, "1")
    value = str(value).strip().lower()
    if value == "auto":
        return os.cpu_count() or 1
    try:
        t = int(value)
    except ValueError:
        raise ConfigError(f"threads must be an integer or 'auto', got {value!r}") from None
    if t < 1:
        raise ConfigError("threads must be >= 1")
    return t


def run_dir(out: Path, experiment: str, cfg: dict) -> Path:
    hashed = {k: v for k, v in cfg.items() if k not in NON_HASHED}
    digest = hashlib.sha256(to_json_text({"experiment": experiment, **hashed}).encode()).hexdigest()[:12]
    return Path(out) / f"{experiment}-{cfg['seed']}-{digest}"


# ---------------------------------------------------------------------------
# Builders


def _grid(cfg):
    from .spectral import GridParams

    return GridParams(cfg["k0"], cfg["lam"], cfg["M"])


def _model(cfg):
    from .nonlinearity import ModelParams

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ModelParams(cfg["variant"], cfg["a"], cfg["b"], cfg["b_back"])


def _scheme_config(cfg, flow=None):
    from .dynamics import SchemeConfig

    return SchemeConfig(
        dt=cfg["dt"], scheme=flow or cfg["flow"], nu=cfg["nu"], epsilon=cfg["epsilon"],
        solver_tol=cfg["solver_tol"], solver_max_iters=cfg["solver_max_iters"],
        blowup_norm_cap=cfg["blowup_norm_cap"], galerkin_m=cfg["galerkin_m"], max_halvings=cfg["max_halvings"],
    )


def _spec(cfg, **changes):
    from .verify import ExperimentSpec

    kw = dict(
        flow=cfg["flow"], ensemble_size=cfg["n"], t_end=cfg["t_end"], dt=cfg["dt"], grid=_grid(cfg),
        model=_model(cfg), nu=cfg["nu"], epsilon=cfg["epsilon"], epsilon_list=cfg["epsilon_list"],
        alpha_list=cfg["alpha_list"], seed=cfg["seed"], m_list=cfg["m_list"], record_every=cfg["record_every"],
        solver_tol=cfg["solver_tol"], solver_max_iters=cfg["solver_max_iters"],
        blowup_norm_cap=cfg["blowup_norm_cap"], max_halvings=cfg["max_halvings"], galerkin_m=cfg["galerkin_m"],
        eps_dt_scale=cfg["eps_dt_scale"], holder_trajectories=cfg["holder_trajectories"],
    )
    kw.update(changes)
    return ExperimentSpec(**kw)


def _csv(cfg) -> bool:
    return cfg["format"] in ("csv", "both")


def _json(cfg) -> bool:
    return cfg["format"] in ("json", "both")


# ---------------------------------------------------------------------------
# Commands


def cmd_sample_gibbs(cfg: dict, rd: Path) -> int:
    from .gibbs import GibbsParams, marginal_gof_test, sample_gibbs_ensemble

    params = GibbsParams(cfg["nu"], _grid(cfg))
    x = sample_gibbs_ensemble(params, cfg["seed"], cfg["n"])
    if _csv(cfg):
        write_states_csv(rd / "samples.csv", x)
    body = {"samples": cfg["n"], "nu": cfg["nu"]}
    if cfg["n"] >= 100:
        body["report"] = marginal_gof_test(x, params, seed=cfg["seed"]).to_json_obj()
    if _json(cfg):
        write_report(rd / "report.json", body, "sample-gibbs")
    return EXIT_OK


def cmd_run(cfg: dict, rd: Path) -> int:
    from .dynamics import STATUS_OK, evolve_ensemble
    from .gibbs import GibbsParams, sample_gibbs_ensemble
    from .verify import geometric_states

    grid, model = _grid(cfg), _model(cfg)
    sc = _scheme_config(cfg)
    n = cfg["n"]
    if cfg["init"] == "gibbs":
        x0 = sample_gibbs_ensemble(GibbsParams(cfg["nu"], grid), cfg["seed"], n)
    else:
        x0 = geometric_states(grid, n, cfg["amplitude"], cfg["seed"])
    rows_t, rows_id, rows_x = [], [], []

    def keep(t, x, status):
        live = np.flatnonzero(status == STATUS_OK)
        rows_t.append(np.full(live.size, t))
        rows_id.append(live)
        rows_x.append(x[live].copy())

    run = evolve_ensemble(x0, grid, sc, model, cfg["t_end"], seed=cfg["seed"], record_every=cfg["record_every"],
                          keep_states=False, threads=cfg["threads"], callback=keep)
    t = np.concatenate(rows_t)
    ids = np.concatenate(rows_id)
    xs = np.concatenate(rows_x)
    order = np.lexsort((t, ids))  # group by trajectory, then time
    t, ids, xs = t[order], ids[order], xs[order]
    energy = 0.5 * np.sum(xs * xs, axis=(1, 2))
    if _csv(cfg):
        write_trajectory_csv(rd / "trajectory.csv", t, xs, energy, traj=ids if n > 1 else None)
    failed = np.flatnonzero(run.status != STATUS_OK)
    diag = {
        "flow": sc.scheme.value,
        "trajectories": n,
        "status": ["ok" if s == 0 else ("blowup" if s == 1 else "step_failure") for s in run.status],
        "failure_time": [None if np.isnan(f) else float(f) for f in run.failure_time],
        "midpoint_iterations": run.iterations.tolist(),
    }
    e0 = 0.5 * np.sum(x0 * x0, axis=(1, 2))
    drift = []
    for i in range(n):
        e = energy[ids == i]
        drift.append(float(np.max(np.abs(e - e0[i])) / e0[i]) if e0[i] > 0 else 0.0)
    diag["max_relative_energy_drift"] = drift
    if _json(cfg):
        write_report(rd / "diagnostics.json", diag, "run")
    if failed.size:
        print(f"{failed.size} of {n} trajectories failed (first at t={np.nanmin(run.failure_time):g}); "
              "partial trajectories kept", file=sys.stderr)
        return EXIT_BLOWUP
    return EXIT_OK


def _verify(experiment: str, cfg: dict, rd: Path) -> tuple[bool, dict, list]:
    """Run an experiment; return ``(passed, report_body, csv_tables)``."""
    from . import verify as V

    grid, model = _grid(cfg), _model(cfg)
    if experiment == "invariance":
        rep, run = V.invariance_experiment(_spec(cfg), threads=cfg["threads"], return_run=True)
        if cfg["dump_states"] and _csv(cfg):
            write_states_csv(rd / "terminal_states.csv", run.final, prefix={"status": run.status})
        body = rep.to_json_obj()
        last = body["per_time"][-1]["battery"]["observables"] if body["per_time"] else []
        modes = [{"mode": n + 1, "mean_re": float(rep.per_mode_mean[n, 0]), "mean_im": float(rep.per_mode_mean[n, 1]),
                  "var_re": float(rep.per_mode_variance[n, 0]), "var_im": float(rep.per_mode_variance[n, 1])}
                 for n in range(grid.M)]
        return rep.passed, body, [("per_mode.csv", modes), ("battery.csv", last)]
    if experiment == "generators":
        max_mode = cfg["max_mode"] if cfg["max_mode"] is not None else min(grid.M - 3, 13)
        out = V.generator_identities(grid, model, nu=Fraction(cfg["nu"]), max_degree=cfg["max_degree"],
                                     max_mode=max_mode, skew_pairs=cfg["skew_pairs"], seed=cfg["seed"])
        out["max_mode"] = max_mode
        table = [{"identity": k, "nonzero_residuals": v} for k, v in out["nonzero_residuals"].items()]
        return out["passed"], out, [("identities.csv", table)]
    if experiment == "bm-convergence":
        m_list = cfg["m_list"] or tuple(range(3, grid.M))
        out = V.bm_convergence_sweep(grid, model, cfg["alpha"], cfg["count"], cfg["seed"], m_list, nu=cfg["nu"])
        return out["passed"], out, [("summary.csv", [{k: out[k] for k in ("states", "violations", "worst_ratio",
                                                                          "support_exact_zero")}])]
    if experiment == "eps-limit":
        out = V.epsilon_limit_study(_spec(cfg), threads=cfg["threads"])
        table = [{k: r[k] for k in ("epsilon", "dt", "steps", "invariance_passed", "holder_mean", "holder_max")}
                 for r in out["rows"]]
        return out["passed"], out, [("epsilon.csv", table)]
    if experiment == "m-refinement":
        out = V.m_refinement_study(_spec(cfg), threads=cfg["threads"])
        return out["passed"], out, [("refinement.csv", out["rows"])]
    if experiment == "energy":
        out = V.energy_experiment(grid, model, dt=cfg["dt"], steps=cfg["steps"], count=cfg["count"],
                                  amplitude=cfg["amplitude"], seed=cfg["seed"], solver_tol=cfg["solver_tol"])
        return out["passed"], out, [("energy.csv", out["rows"])]
    raise ConfigError(f"unknown experiment {experiment!r}")


def cmd_verify(experiment: str, cfg: dict, rd: Path) -> int:
    passed, body, tables = _verify(experiment, cfg, rd)
    if _csv(cfg):
        for name, rows in tables:
            write_table_csv(rd / name, rows)
    if _json(cfg):
        write_report(rd / "report.json", {"experiment": experiment, **body}, "verify")
    if not passed:
        reasons = body.get("failed_identities") or body.get("test_verdicts", {}).get("failures") or []
        print(f"verify {experiment}: FAILED", file=sys.stderr)
        for r in list(reasons)[:10]:
            print(f"  {r}", file=sys.stderr)
        return EXIT_FAIL
    print(f"verify {experiment}: passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one setting")
    common.add_argument("--seed", type=int, help="64-bit seed")
    common.add_argument("--out", help="parent directory for run directories (default: runs)")
    common.add_argument("--threads", help=f"worker threads or 'auto' (default: ${THREADS_ENV} or 1)")
    common.add_argument("--format", choices=("csv", "json", "both"))

    p = argparse.ArgumentParser(prog="shellgibbs", description="GOY/SABRA shell models and their Gibbs measures")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("sample-gibbs", parents=[common], help="draw samples from the Gibbs measure")
    r = sub.add_parser("run", parents=[common], help="integrate trajectories")
    r.add_argument("--flow", choices=FLOWS)
    v = sub.add_parser("verify", parents=[common], help="run a verification experiment")
    v.add_argument("experiment", choices=EXPERIMENTS)
    v.add_argument("--flow", choices=FLOWS)
    return p


def _raw_settings(args) -> dict:
    raw = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        raw.update(parse_config_text(text, args.config))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()
    for key, attr in (("seed", "seed"), ("output_dir", "out"), ("threads", "threads"), ("format", "format"),
                      ("flow", "flow")):
        val = getattr(args, attr, None)
        if val is not None:
            raw[key] = str(val)
    return raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    experiment = args.experiment if args.command == "verify" else args.command
    try:
        cfg = resolve_config(experiment if args.command == "verify" else args.command, _raw_settings(args))
        name = experiment if args.command != "run" else f"run-{cfg['flow']}"
        # validate every parameter object before touching the file system
        _grid(cfg)
        _model(cfg)
        if args.command == "run":
            _scheme_config(cfg)
        if cfg["n"] is not None and cfg["n"] < 1:
            raise ConfigError("n must be positive")
        if not cfg["nu"] > 0:
            raise ConfigError(f"nu must be positive, got {cfg['nu']}")
    except (ConfigError, ShellGibbsError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rd = run_dir(Path(cfg["output_dir"]), name, cfg)
        rd.mkdir(parents=True, exist_ok=True)
        manifest_cfg = {k: v for k, v in cfg.items() if k != "output_dir"}
        write_manifest(rd / "manifest.json", name, manifest_cfg, cfg["seed"])
        if args.command == "sample-gibbs":
            code = cmd_sample_gibbs(cfg, rd)
        elif args.command == "run":
            code = cmd_run(cfg, rd)
        else:
            code = cmd_verify(experiment, cfg, rd)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ShellGibbsError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(str(rd))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
