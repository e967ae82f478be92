"""Command-line front end.

Configuration is a flat key=value file (dotted section names, '#' or ';'
comments); every key also accepts its bare last segment as an alias, so a
minimal file like

    command = eigen
    p = 2
    dim = 1
    n = 511

is valid.  Values from --set key=value override the file.  Artifacts are
written into the --out directory and are bit-identical across reruns of
the same configuration: JSON is key-sorted with no timestamps, CSV floats
carry 17 significant digits, and the only randomness (calibration probes)
is driven by the recorded seed.

Exit codes: 0 success, 2 configuration error, 3 solver failure
(divergence, slab escape, budget exhaustion, residual above tolerance),
4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from .checks import (
    check_distance_bounds,
    check_residual,
    check_scaling,
    summary_table,
    write_checks_json,
)
from .constants import (
    ConstantsInput,
    build_constants_report,
    calibrate_gradient_constant,
    envelope_constant,
)
from .continuation import (
    ConvectionSpec,
    DivergenceError,
    EpsSchedule,
    ProblemSpec,
    solve_singular_torsion,
    solve_sublinear,
    write_stage_csv,
)
from .core import CoreConfig, solve_eigenpair
from .driver import (
    AdmissibleSet,
    IterateEscapeError,
    check_membership,
    iterate_to_fixed_point,
    lambda_sweep,
    select_amplitude,
    write_sweep_csv,
)
from .grids import build_grid, gradient, read_field_csv, sup_norm, write_field_csv

__all__ = ["ConfigError", "RunConfig", "parse_config", "run", "main"]

COMMANDS = (
    "solve-u0",
    "solve-sublinear",
    "solve-supercritical",
    "eigen",
    "constants",
    "sweep-lambda",
    "verify",
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str | None = None
    dim: int = 1
    lo: float = 0.0
    hi: float = 1.0
    n: int = 511
    p: float = 2.0
    alpha: float = 0.5
    lam: float = 1.0
    a: float = 0.0
    b: float = 0.0
    r1: float = 0.5
    r2: float = 0.5
    q: float = 3.0
    u0_sup: float | None = None
    tol: float = 1e-10
    max_iter: int = 200
    delta_reg: float = 1e-10
    armijo: float = 1e-4
    eps0: float = 1.0
    factor: float = 0.1
    floor: float = 1e-8
    transfer: bool = True
    sweep_lambdas: tuple = (0.1, 0.01, 0.001, 0.0001)
    seed: int = 42
    out: str | None = None


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_float_list(raw: str) -> tuple:
    parts = [s.strip() for s in raw.split(",") if s.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(s) for s in parts)


# canonical key -> (RunConfig attribute, parser)
_KEYS = {
    "command": ("command", str),
    "grid.dim": ("dim", int),
    "grid.lo": ("lo", float),
    "grid.hi": ("hi", float),
    "grid.n": ("n", int),
    "problem.p": ("p", float),
    "problem.alpha": ("alpha", float),
    "problem.lambda": ("lam", float),
    "problem.a": ("a", float),
    "problem.b": ("b", float),
    "problem.r1": ("r1", float),
    "problem.r2": ("r2", float),
    "problem.q": ("q", float),
    "problem.u0_sup": ("u0_sup", float),
    "solver.tol": ("tol", float),
    "solver.max_iter": ("max_iter", int),
    "solver.delta_reg": ("delta_reg", float),
    "solver.armijo": ("armijo", float),
    "schedule.eps0": ("eps0", float),
    "schedule.factor": ("factor", float),
    "schedule.floor": ("floor", float),
    "schedule.transfer": ("transfer", _parse_bool),
    "sweep.lambdas": ("sweep_lambdas", _parse_float_list),
    "seed": ("seed", int),
    "out": ("out", str),
}

_BARE = {canon.split(".")[-1]: canon for canon in _KEYS}


def _apply_key(cfg: RunConfig, key: str, raw: str, where: str = "") -> None:
    canon = key if key in _KEYS else _BARE.get(key)
    if canon is None:
        raise ConfigError(f"{where}unknown key {key!r}")
    attr, parser = _KEYS[canon]
    try:
        value = parser(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}invalid value for {key!r}: {exc}") from None
    setattr(cfg, attr, value)


def _validate(cfg: RunConfig) -> None:
    if cfg.command is not None and cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}; choose from {', '.join(COMMANDS)}")
    if cfg.dim not in (1, 2):
        raise ConfigError(f"dim must be 1 or 2, got {cfg.dim}")
    if cfg.n < 2:
        raise ConfigError(f"n must be at least 2, got {cfg.n}")
    if not (cfg.lo < cfg.hi):
        raise ConfigError(f"grid extent needs lo < hi, got [{cfg.lo}, {cfg.hi}]")
    if not (cfg.p > 1.0):
        raise ConfigError(f"p must exceed 1, got {cfg.p}")
    if not (0.0 < cfg.alpha < 1.0):
        raise ConfigError("alpha must lie in (0,1)")
    if not (cfg.lam > 0.0):
        raise ConfigError(f"lambda must be positive, got {cfg.lam}")
    if cfg.a < 0.0 or cfg.b < 0.0:
        raise ConfigError("coefficients a, b must be nonnegative")
    if cfg.r1 <= 0.0 or cfg.r2 <= 0.0:
        raise ConfigError("exponents r1, r2 must be positive")
    if cfg.command in ("solve-sublinear", "solve-supercritical", "sweep-lambda"):
        crit = cfg.p - 1.0
        if cfg.r1 == crit or cfg.r2 == crit:
            raise ConfigError(f"r1 and r2 must differ from the borderline p-1 = {crit}")
    if not (cfg.q > 1.0):
        raise ConfigError(f"q must exceed 1, got {cfg.q}")
    if cfg.u0_sup is not None and not (cfg.u0_sup > 0.0):
        raise ConfigError(f"u0_sup must be positive when given, got {cfg.u0_sup}")
    if not (1e-14 <= cfg.tol <= 1e-1):
        raise ConfigError(f"tol must lie in [1e-14, 1e-1], got {cfg.tol}")
    if cfg.max_iter < 1:
        raise ConfigError(f"max_iter must be at least 1, got {cfg.max_iter}")
    if not (0.0 <= cfg.delta_reg <= 1e-2):
        raise ConfigError(f"delta_reg must lie in [0, 1e-2], got {cfg.delta_reg}")
    if not (0.0 < cfg.armijo < 0.5):
        raise ConfigError(f"armijo must lie in (0, 0.5), got {cfg.armijo}")
    if not (cfg.eps0 > cfg.floor > 0.0):
        raise ConfigError("schedule needs eps0 > floor > 0")
    if not (0.0 < cfg.factor < 1.0):
        raise ConfigError(f"schedule factor must lie in (0,1), got {cfg.factor}")
    if len(cfg.sweep_lambdas) == 0 or any(x <= 0.0 for x in cfg.sweep_lambdas):
        raise ConfigError("sweep.lambdas must be a nonempty list of positive values")
    if cfg.seed < 0:
        raise ConfigError(f"seed must be nonnegative, got {cfg.seed}")


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse flat key=value text into a RunConfig; errors carry line numbers."""
    cfg = replace(base) if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#") or stripped.startswith(";"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        _apply_key(cfg, key.strip(), raw.strip(), where=f"line {lineno}: ")
    _validate(cfg)
    return cfg


def _config_echo(cfg: RunConfig) -> dict:
    echo = {}
    for canon, (attr, _) in _KEYS.items():
        if canon == "out":
            continue
        value = getattr(cfg, attr)
        if isinstance(value, tuple):
            value = list(value)
        echo[canon] = value
    return echo


def _apply_echo(cfg: RunConfig, echo: dict) -> None:
    for canon, value in echo.items():
        if canon not in _KEYS:
            raise ConfigError(f"run report carries unknown key {canon!r}")
        attr, _ = _KEYS[canon]
        if isinstance(value, list):
            value = tuple(value)
        setattr(cfg, attr, value)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="ascii") as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=True)
        f.write("\n")


def _core_cfg(cfg: RunConfig) -> CoreConfig:
    return CoreConfig(
        delta_reg=cfg.delta_reg, tol=cfg.tol, max_iter=cfg.max_iter, armijo=cfg.armijo
    )


def _grid(cfg: RunConfig):
    return build_grid(cfg.dim, [[cfg.lo, cfg.hi]] * cfg.dim, cfg.n)


def _schedule(cfg: RunConfig) -> EpsSchedule:
    return EpsSchedule(cfg.eps0, cfg.factor, cfg.floor, cfg.transfer)


def _zero_convection(p: float) -> ConvectionSpec:
    # exponent placed away from the borderline p-1 so spec validation passes
    return ConvectionSpec(0.0, 0.0, 0.5 * (p - 1.0), 0.5 * (p - 1.0))


def _convection(cfg: RunConfig) -> ConvectionSpec:
    if cfg.a == 0.0 and cfg.b == 0.0:
        return _zero_convection(cfg.p)
    return ConvectionSpec(cfg.a, cfg.b, cfg.r1, cfg.r2)


def _admissible_q(cfg: RunConfig) -> float | None:
    q_floor = max(float(cfg.dim), cfg.p / (cfg.p - 1.0))
    if cfg.q > q_floor and cfg.alpha * cfg.q < 1.0:
        return cfg.q
    return None


def _base_report(cfg: RunConfig) -> dict:
    return {"command": cfg.command, "config": _config_echo(cfg), "seed": cfg.seed}


def _cmd_eigen(cfg: RunConfig, out_dir: str) -> int:
    grid = _grid(cfg)
    pair = solve_eigenpair(grid, cfg.p, _core_cfg(cfg))
    write_field_csv(pair.phi1, os.path.join(out_dir, "phi1.csv"))
    payload = _base_report(cfg)
    interior = grid.interior_mask
    payload.update(
        {
            "lambda1": pair.lambda1,
            "iterations": pair.iterations,
            "phi1_sup": sup_norm(pair.phi1),
            "phi1_min_interior": float(pair.phi1.values[interior].min()),
        }
    )
    _write_json(os.path.join(out_dir, "report.json"), payload)
    print(f"lambda1 = {pair.lambda1:.12g} after {pair.iterations} iterations")
    return 0


def _cmd_solve_u0(cfg: RunConfig, out_dir: str) -> int:
    grid = _grid(cfg)
    u0, rep = solve_singular_torsion(grid, cfg.p, cfg.alpha, _schedule(cfg), _core_cfg(cfg))
    write_field_csv(u0, os.path.join(out_dir, "u0.csv"))
    write_stage_csv(rep.stages, os.path.join(out_dir, "stages.csv"))
    payload = _base_report(cfg)
    payload["report"] = rep.to_json_dict()
    _write_json(os.path.join(out_dir, "report.json"), payload)
    print(
        f"u0: sup {rep.sup_norm:.9g}, k1 {rep.k1:.6g}, "
        f"{rep.iterations} inner solves, converged={rep.converged}"
    )
    return 0 if rep.converged else 3


def _cmd_solve_sublinear(cfg: RunConfig, out_dir: str) -> int:
    grid = _grid(cfg)
    spec = ProblemSpec(cfg.p, cfg.alpha, cfg.lam, _convection(cfg))
    u, rep = solve_sublinear(grid, spec, _schedule(cfg), _core_cfg(cfg))
    write_field_csv(u, os.path.join(out_dir, "u.csv"))
    write_stage_csv(rep.stages, os.path.join(out_dir, "stages.csv"))
    res = check_residual(spec, u, rel_tol=1e-6)
    payload = _base_report(cfg)
    payload["report"] = rep.to_json_dict()
    payload["residual_check"] = res.to_json_dict()
    _write_json(os.path.join(out_dir, "report.json"), payload)
    print(
        f"u: sup {rep.sup_norm:.9g}, residual check "
        f"{'PASS' if res.passed else 'FAIL'}, converged={rep.converged}"
    )
    return 0 if (rep.converged and res.passed) else 3


def _cmd_constants(cfg: RunConfig, out_dir: str) -> int:
    grid = _grid(cfg)
    core_cfg = _core_cfg(cfg)
    q_eff = _admissible_q(cfg)
    u0 = None
    if cfg.u0_sup is None or q_eff is not None:
        # the gradient envelope needs the full reference profile, not just
        # its sup, so a supplied u0_sup only skips the solve when no
        # admissible q is in play
        u0, _ = solve_singular_torsion(grid, cfg.p, cfg.alpha, _schedule(cfg), core_cfg)
    u0_sup_eff = cfg.u0_sup if cfg.u0_sup is not None else sup_norm(u0)
    cp_raw = None
    env = None
    if q_eff is not None:
        cp_raw = calibrate_gradient_constant(grid, cfg.p, q_eff, 3, core_cfg, cfg.seed)
        env = envelope_constant(cp_raw, u0, cfg.p, cfg.alpha, q_eff)
    inp = ConstantsInput(
        p=cfg.p,
        alpha=cfg.alpha,
        a=cfg.a,
        b=cfg.b,
        r1=cfg.r1,
        r2=cfg.r2,
        u0_sup=u0_sup_eff,
        dim=cfg.dim,
        q=q_eff,
        cp_hat=env,
    )
    report = build_constants_report(inp, cfg.lam)
    payload = _base_report(cfg)
    payload["constants"] = report.to_json_dict()
    payload["cp_raw"] = cp_raw
    payload["q_admissible"] = q_eff is not None
    _write_json(os.path.join(out_dir, "report.json"), payload)
    print(
        f"A = {report.A:.9g}, A* = {report.A_star:.9g}, "
        f"feasible at lambda={cfg.lam:g}: {report.feasible}"
    )
    return 0


def _cmd_solve_supercritical(cfg: RunConfig, out_dir: str) -> int:
    grid = _grid(cfg)
    core_cfg = _core_cfg(cfg)
    sched = _schedule(cfg)
    u0, _ = solve_singular_torsion(grid, cfg.p, cfg.alpha, sched, core_cfg)
    q_eff = _admissible_q(cfg)
    env = None
    cp_raw = None
    if q_eff is not None:
        cp_raw = calibrate_gradient_constant(grid, cfg.p, q_eff, 3, core_cfg, cfg.seed)
        env = envelope_constant(cp_raw, u0, cfg.p, cfg.alpha, q_eff)
    conv = _convection(cfg)
    inp = ConstantsInput(
        p=cfg.p,
        alpha=cfg.alpha,
        a=cfg.a,
        b=cfg.b,
        r1=cfg.r1,
        r2=cfg.r2,
        u0_sup=sup_norm(u0),
        dim=cfg.dim,
        q=q_eff,
        cp_hat=env,
    )
    creport = build_constants_report(inp, cfg.lam)
    cap = select_amplitude(cfg.lam, inp, env)
    aset = AdmissibleSet(u0, cfg.lam, cap)
    spec = ProblemSpec(cfg.p, cfg.alpha, cfg.lam, conv)
    u, rep, _ = iterate_to_fixed_point(spec, aset, core_cfg)
    member, margins = check_membership(u, aset)
    res = check_residual(spec, u, rel_tol=1e-6)
    write_field_csv(u, os.path.join(out_dir, "u.csv"))
    payload = _base_report(cfg)
    payload["constants"] = creport.to_json_dict()
    payload["cp_raw"] = cp_raw
    payload["cap"] = cap
    payload["iteration"] = rep.to_json_dict()
    payload["membership"] = {"in_set": member, "margins": margins}
    payload["residual_check"] = res.to_json_dict()
    _write_json(os.path.join(out_dir, "report.json"), payload)
    print(
        f"fixed point: sup {sup_norm(u):.9g}, cap {cap:.6g}, in_set={member}, "
        f"residual check {'PASS' if res.passed else 'FAIL'}"
    )
    return 0 if (rep.converged and member and res.passed) else 3


def _cmd_sweep(cfg: RunConfig, out_dir: str) -> int:
    grid = _grid(cfg)
    core_cfg = _core_cfg(cfg)
    sched = _schedule(cfg)
    u0, _ = solve_singular_torsion(grid, cfg.p, cfg.alpha, sched, core_cfg)
    q_eff = _admissible_q(cfg)
    env = None
    cp_raw = None
    if q_eff is not None:
        cp_raw = calibrate_gradient_constant(grid, cfg.p, q_eff, 3, core_cfg, cfg.seed)
        env = envelope_constant(cp_raw, u0, cfg.p, cfg.alpha, q_eff)
    conv = _convection(cfg)
    rows, _ = lambda_sweep(
        grid,
        cfg.p,
        cfg.alpha,
        conv,
        list(cfg.sweep_lambdas),
        core_cfg,
        sched,
        u0,
        env,
        q_eff,
    )
    write_sweep_csv(rows, os.path.join(out_dir, "sweep.csv"))
    inp = ConstantsInput(
        p=cfg.p,
        alpha=cfg.alpha,
        a=cfg.a,
        b=cfg.b,
        r1=cfg.r1,
        r2=cfg.r2,
        u0_sup=sup_norm(u0),
        dim=cfg.dim,
        q=q_eff,
        cp_hat=env,
    )
    payload = _base_report(cfg)
    payload["constants"] = build_constants_report(inp).to_json_dict()
    payload["cp_raw"] = cp_raw
    payload["rows"] = [r.to_json_dict() for r in rows]
    _write_json(os.path.join(out_dir, "report.json"), payload)
    failed = [r for r in rows if r.error]
    for r in rows:
        status = r.error if r.error else f"sup {r.sup_u:.9g}, in_set={r.in_set}"
        print(f"lambda {r.lam:g}: {status}")
    return 3 if len(failed) == len(rows) else 0


def _cmd_verify(cfg: RunConfig, out_dir: str) -> int:
    report_path = os.path.join(out_dir, "report.json")
    if not os.path.exists(report_path):
        raise ConfigError(f"no report.json under {out_dir!r}; point --out at a run directory")
    with open(report_path, encoding="ascii") as f:
        data = json.load(f)
    run_cmd = data.get("command")
    field_names = {"solve-u0": "u0.csv", "solve-sublinear": "u.csv", "solve-supercritical": "u.csv"}
    if run_cmd not in field_names:
        raise ConfigError(f"verify supports solve runs, not {run_cmd!r}")
    echoed = RunConfig()
    _apply_echo(echoed, data["config"])
    grid = _grid(echoed)
    u = read_field_csv(os.path.join(out_dir, field_names[run_cmd]))
    if not grid.compatible(u.grid):
        raise ConfigError("stored field does not match the grid in report.json")
    core_cfg = _core_cfg(echoed)
    sched = _schedule(echoed)
    lam = 1.0 if run_cmd == "solve-u0" else echoed.lam
    conv = _zero_convection(echoed.p) if run_cmd == "solve-u0" else _convection(echoed)
    spec = ProblemSpec(echoed.p, echoed.alpha, lam, conv)
    results = [check_residual(spec, u, rel_tol=1e-6)]
    _, _, dist_res = check_distance_bounds(u)
    results.append(dist_res)
    if conv.is_zero:
        results.append(
            check_scaling(grid, echoed.p, echoed.alpha, lam, core_cfg, sched)
        )
    write_checks_json(results, os.path.join(out_dir, "checks.json"))
    table = summary_table(results)
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="ascii") as f:
        f.write(table + "\n")
    print(table)
    return 0 if all(r.passed for r in results) else 4


_DISPATCH = {
    "eigen": _cmd_eigen,
    "solve-u0": _cmd_solve_u0,
    "solve-sublinear": _cmd_solve_sublinear,
    "solve-supercritical": _cmd_solve_supercritical,
    "constants": _cmd_constants,
    "sweep-lambda": _cmd_sweep,
    "verify": _cmd_verify,
}


def run(cfg: RunConfig) -> int:
    """Execute the configured command; returns the process exit code."""
    _validate(cfg)
    if cfg.command is None:
        raise ConfigError("no command given (set one on the command line or via command=...)")
    out_dir = cfg.out if cfg.out is not None else "plaplab-run"
    if cfg.command != "verify":
        os.makedirs(out_dir, exist_ok=True)
    elif not os.path.isdir(out_dir):
        raise ConfigError(f"verify needs --out pointing at an existing run directory")
    return _DISPATCH[cfg.command](cfg, out_dir)


def main(argv: list | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="plaplab",
        description="Numerical laboratory for a singular quasilinear Dirichlet problem.",
    )
    parser.add_argument("command", nargs="?", choices=COMMANDS, help="what to run")
    parser.add_argument("--config", help="path to a key=value configuration file")
    parser.add_argument("--out", help="output directory (default plaplab-run)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one configuration key (repeatable)",
    )
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig()
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as f:
                    text = f.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config file: {exc}") from None
            cfg = parse_config(text, cfg)
        for item in args.overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, _, raw = item.partition("=")
            _apply_key(cfg, key.strip(), raw.strip(), where="--set: ")
        if args.command:
            cfg.command = args.command
        if args.out:
            cfg.out = args.out
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, IterateEscapeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
