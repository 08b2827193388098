"""Command-line front end.

Subcommands: ``simulate``, ``reconstruct``, ``benchmark`` and ``check``.
Exit codes: 0 success, 2 configuration error, 3 runtime or solver error,
4 property-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .bregman import MajorantKind
from .config import DEFAULT_CONFIG_TEXT, RunConfig, load_config, parse_config
from .errors import ConfigError, DomainError, SolverError
from .io import load_simulation, save_simulation, write_json
from . import bench, checks

log = logging.getLogger("vbmm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_CHECK = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vbmm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML run configuration (defaults built in)")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, help="noise seed (overrides seed)")
        sp.add_argument("-q", "--quiet", action="store_true")

    def solver_flags(sp):
        sp.add_argument("--max-iters", type=int)
        sp.add_argument("--wall-budget-s", type=float)
        sp.add_argument("--wall-time", action="store_true",
                        help="record wall-clock times in the trace (not reproducible)")

    common(sub.add_parser("simulate", help="generate phantom, projector and sinogram"))
    rec = sub.add_parser("reconstruct", help="reconstruct simulated data with one majorant")
    common(rec)
    solver_flags(rec)
    rec.add_argument("--majorant", default="maj4", help="maj1, maj4, maj5, maj6 or maj8")
    ben = sub.add_parser("benchmark", help="compare majorants with the limit-point protocol")
    common(ben)
    solver_flags(ben)
    chk = sub.add_parser("check", help="run the numerical property suite")
    common(chk)
    chk.add_argument("--fault-scale", type=float,
                     help="scale the Maj1 coefficients in its majorization check")
    return p


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config(DEFAULT_CONFIG_TEXT)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be >= 0", field="--seed")
        cfg.seed = args.seed
    if args.out:
        cfg.output_dir = args.out
    overrides = {}
    if getattr(args, "max_iters", None) is not None:
        if args.max_iters < 0:
            raise ConfigError("max-iters must be >= 0", field="--max-iters")
        overrides["max_iters"] = args.max_iters
    if getattr(args, "wall_budget_s", None) is not None:
        if not args.wall_budget_s > 0:
            raise ConfigError("wall-budget-s must be > 0", field="--wall-budget-s")
        overrides["wall_clock_budget"] = args.wall_budget_s
    if getattr(args, "wall_time", False):
        overrides["record_wall_time"] = True
    if overrides:
        cfg.solver = dataclasses.replace(cfg.solver, **overrides)
        cfg.per_majorant = {k: dataclasses.replace(v, **overrides)
                            for k, v in cfg.per_majorant.items()}
    return cfg


def cmd_simulate(cfg: RunConfig) -> int:
    data = bench.simulate_from_config(cfg)
    d = bench.write_simulation(cfg.output_dir, data)
    log.info("simulate: %d rows, %d pixels in mask, %d counts -> %s",
             data.op.rows, int(data.mask.sum()), int(data.y.sum()), d)
    return EXIT_OK


def cmd_reconstruct(cfg: RunConfig, majorant: str) -> int:
    kind = MajorantKind.parse(majorant)
    data = load_simulation(Path(cfg.output_dir) / bench.SIM_DIR)
    out = Path(cfg.output_dir) / "reconstruct" / kind.label
    _, hist, _ = bench.reconstruct(cfg, data, kind, out)
    log.info("reconstruct %s: %d iterations (%s), F=%.10g, nrmse=%.4f -> %s",
             kind.label, hist.n_iters, hist.stop_reason, hist.objective[-1],
             hist.nrmse[-1], out)
    return EXIT_OK


def cmd_benchmark(cfg: RunConfig, reuse: bool = True) -> int:
    if len(cfg.benchmark.majorants) < 2:
        raise ConfigError("benchmark needs at least two majorants", field="benchmark.majorants")
    sim_dir = Path(cfg.output_dir) / bench.SIM_DIR
    if reuse and (sim_dir / "meta.json").exists():
        data = load_simulation(sim_dir)
    else:
        data = bench.simulate_from_config(cfg)
        save_simulation(sim_dir, data)
    out = Path(cfg.output_dir) / "benchmark"
    results = bench.run_benchmark(cfg, data, out)
    for r in results:
        log.info("benchmark %s: K=%d, reaches %.0e at iteration %d (%d backprojections)",
                 r.majorant, r.K, r.tolerance, r.iters_to_tol, r.adj_to_tol)
    return EXIT_OK


def cmd_check(cfg: RunConfig, fault_scale=None) -> int:
    c = cfg.check
    scale = fault_scale if fault_scale is not None else c.fault_scale
    if scale is not None and not scale > 0:
        raise ConfigError("fault scale must be > 0", field="--fault-scale")
    report = checks.run_check_suite(c.samples, c.seed, c.model_rows, c.model_cols, scale)
    out = Path(cfg.output_dir) / "check" / "report.json"
    write_json(out, report.as_dict())
    for e in report.entries:
        log.info("%s %s: %.6g (threshold %.3g)", "PASS" if e.passed else "FAIL", e.name,
                 e.value, e.threshold)
    return EXIT_OK if report.passed else EXIT_CHECK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        cfg = _load(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, args.majorant)
        if args.command == "benchmark":
            return cmd_benchmark(cfg, reuse=args.seed is None)
        return cmd_check(cfg, args.fault_scale)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except ValueError as exc:
        if isinstance(exc, DomainError):
            log.error("runtime error: %s", exc)
            return EXIT_RUNTIME
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (SolverError, OSError, RuntimeError) as exc:
        log.error("runtime error: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
