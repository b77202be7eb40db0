"""Command-line driver: ``mechanochem {run,quasistatic,perturb,converge,validate}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_config
from .materials import HypothesisError
from .output import write_diagnostics_csv, write_vtk

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2, 64
THREADS_ENV = "MECHANOCHEM_THREADS"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mechanochem", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (
        ("run", "single simulation; writes diagnostics CSV and VTK snapshots"),
        ("quasistatic", "sweep beta towards the quasi-static nutrient limit"),
        ("perturb", "continuous-dependence study under data perturbations"),
        ("converge", "self-convergence study over a grid sequence"),
        ("validate", "parse and validate a config file"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, type=Path, metavar="PATH")
        s.add_argument("--output", type=Path, metavar="DIR")
        s.add_argument("--snapshot-every", type=int, metavar="N")
        s.add_argument("--seed", type=int, metavar="S")
        s.add_argument("--threads", type=int, metavar="K")
    return p


def resolve_threads(flag: int | None) -> int:
    """``--threads`` wins over ``MECHANOCHEM_THREADS``; default 1."""
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    if args.output is not None:
        updates["output__directory"] = str(args.output)
    if args.snapshot_every is not None:
        updates["output__snapshot_every"] = args.snapshot_every
    if args.seed is not None:
        updates["model__seed"] = args.seed
    return cfg.with_values(**updates) if updates else cfg


def _outdir(cfg: RunConfig) -> Path:
    d = Path(cfg["output"]["directory"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_run(cfg: RunConfig, threads: int) -> None:
    from .steppers import run_simulation

    grid = cfg.build_grid()
    params = cfg.build_params()
    phi0 = cfg.initial_phi(grid)
    sigma0 = cfg.initial_sigma(grid, params, phi0)
    out = _outdir(cfg)
    every = cfg["output"]["snapshot_every"]
    prefix = cfg["output"]["vtk_prefix"]
    step = [0]

    def snapshot(state, record):
        if every > 0 and step[0] % every == 0:
            write_vtk(grid, state, out / f"{prefix}_{step[0]:06d}.vtk")
        step[0] += 1

    dt, n = cfg["time"]["dt"], cfg["time"]["n_steps"]
    state, records = run_simulation(grid, params, phi0, sigma0, dt, n, hooks=(snapshot,))
    print(f"run: {n} steps to t={state.time:.6g}, mass {records[0].mass:.6g} -> "
          f"{records[-1].mass:.6g}, sigma in [{min(r.sigma_min for r in records):.6g}, "
          f"{max(r.sigma_max for r in records):.6g}]")
    csv_path = out / cfg["output"]["csv"]
    write_diagnostics_csv(records, csv_path)
    print(f"output: {csv_path} ({len(records)} rows)")


def _emit_sweep(cfg: RunConfig, result, stem: str) -> None:
    out = _outdir(cfg)
    result.to_csv(out / f"{stem}.csv")
    text = result.summary()
    (out / f"{stem}_summary.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    print(f"output: {out / (stem + '.csv')} ({len(result.values)} rows)")


def cmd_quasistatic(cfg: RunConfig, threads: int) -> None:
    from .experiments import quasistatic_sweep

    res = quasistatic_sweep(cfg, cfg["experiment"]["betas"], threads=threads)
    _emit_sweep(cfg, res, "quasistatic")


def cmd_perturb(cfg: RunConfig, threads: int) -> None:
    from .experiments import perturbation_study

    ex = cfg["experiment"]
    q = 4 if ex["dual_branch"] else 2
    res = perturbation_study(cfg, ex["deltas"], ex["perturb_target"], ex["perturb_betas"],
                             q=q, threads=threads)
    _emit_sweep(cfg, res, "perturb")


def cmd_converge(cfg: RunConfig, threads: int) -> None:
    from .experiments import convergence_study

    ex = cfg["experiment"]
    res = convergence_study(cfg, [int(n) for n in ex["grids"]], ex["dt_rule"], threads=threads)
    _emit_sweep(cfg, res, "convergence")


def cmd_validate(cfg: RunConfig, threads: int) -> None:
    print(f"validate: {cfg.source} ok")


COMMANDS = {
    "run": cmd_run,
    "quasistatic": cmd_quasistatic,
    "perturb": cmd_perturb,
    "converge": cmd_converge,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except _UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        threads = resolve_threads(args.threads)
        cfg = _apply_overrides(parse_config(args.config), args)
        print(f"config: {args.config} ok")
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        COMMANDS[args.command](cfg, threads)
    except HypothesisError as exc:
        # caught at run time, but still invalid input
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
