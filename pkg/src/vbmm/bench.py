"""Experiment orchestration: simulate, reconstruct and compare majorants."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bregman import MajorantKind
from .config import RunConfig
from .errors import ConfigError
from .io import load_simulation, save_simulation, write_csv, write_json, write_pgm, write_trace
from .regularizer import GradientOperator
from .simulator import SimulatedData, simulate
from .solver import ReconProblem, SolverConfig, relative_distance, vbmm_run

__all__ = [
    "simulate_from_config",
    "build_problem",
    "reconstruct",
    "MajorantBenchmark",
    "benchmark_majorant",
    "run_benchmark",
    "first_below",
    "SIM_DIR",
]

SIM_DIR = "simulation"


def simulate_from_config(cfg: RunConfig, seed: Optional[int] = None) -> SimulatedData:
    seed = cfg.seed if seed is None else seed
    sim = cfg.simulation
    return simulate(cfg.phantom.to_spec(), cfg.geometry.to_geometry(), seed,
                    background_fraction=sim.background_fraction,
                    background_value=sim.background_value, fov_dilation=sim.fov_dilation)


def build_problem(cfg: RunConfig, data: SimulatedData) -> ReconProblem:
    gop = GradientOperator(data.phantom.width, data.phantom.height)
    return ReconProblem.from_full(data.op, data.y, data.b, cfg.regularizer.to_params(), gop,
                                  data.mask)


def write_simulation(out_dir, data: SimulatedData) -> Path:
    d = Path(out_dir) / SIM_DIR
    save_simulation(d, data)
    return d


def reconstruct(cfg: RunConfig, data: SimulatedData, majorant, out_dir=None,
                solver_cfg: Optional[SolverConfig] = None):
    """Run one majorant; optionally write ``trace.csv`` and ``image.pgm``."""
    problem = build_problem(cfg, data)
    solver_cfg = solver_cfg or cfg.solver_config(majorant, problem.model.rho)
    reference = problem.restrict(data.phantom.values)
    x, hist = vbmm_run(problem, solver_cfg, reference=reference)
    if out_dir is not None:
        d = Path(out_dir)
        write_trace(d / "trace.csv", hist)
        image = problem.embed(x).reshape(data.phantom.height, data.phantom.width)
        write_pgm(d / "image.pgm", image, data.mask)
        write_json(d / "summary.json", {
            "majorant": solver_cfg.majorant.kind.label,
            "iterations": hist.n_iters,
            "stop_reason": hist.stop_reason,
            "final_objective": repr(hist.objective[-1]),
            "final_nrmse": repr(hist.nrmse[-1]),
            "fwd_calls": hist.fwd_calls[-1],
            "adj_calls": hist.adj_calls[-1],
            "M_R": repr(solver_cfg.M_R),
            "epsilon0": repr(solver_cfg.epsilon0),
        })
    return x, hist, problem


def first_below(values, tol: float) -> int:
    """Index of the first entry below ``tol``, or -1."""
    values = np.asarray(values)
    hits = np.flatnonzero(values < tol)
    return int(hits[0]) if hits.size else -1


@dataclass
class MajorantBenchmark:
    majorant: str
    K: int
    stop_reason: str
    rel_distance: np.ndarray
    wall_time: np.ndarray
    fwd_calls: np.ndarray
    adj_calls: np.ndarray
    x_limit: np.ndarray = field(repr=False)
    tolerance: float = 1e-3

    @property
    def iters_to_tol(self) -> int:
        return first_below(self.rel_distance, self.tolerance)

    def _at_tol(self, arr):
        k = self.iters_to_tol
        return arr[k] if k >= 0 else math.nan

    @property
    def time_to_tol(self) -> float:
        return float(self._at_tol(self.wall_time))

    @property
    def adj_to_tol(self):
        return self._at_tol(self.adj_calls)

    @property
    def fwd_to_tol(self):
        return self._at_tol(self.fwd_calls)


def benchmark_majorant(problem: ReconProblem, solver_cfg: SolverConfig, tolerance: float = 1e-3,
                       limit_factor: int = 10) -> MajorantBenchmark:
    """Run to the stopping rule (K iterations), then approximate the limit
    point by ``limit_factor * K`` iterations in total.

    The limit run continues from ``x^K`` for the remaining iterations, which
    gives the same point as a fresh ``limit_factor * K`` run because every
    update depends only on the current iterate.
    """
    iterates = []
    x0 = None
    cfg = dataclasses.replace(solver_cfg, record_wall_time=True)
    x_k, hist = vbmm_run(problem, cfg, x0, callback=lambda k, x: iterates.append(x))
    K = hist.n_iters
    extra = (limit_factor - 1) * K
    if extra > 0:
        more = dataclasses.replace(solver_cfg, max_iters=extra, step_tol=0.0, residual_tol=None,
                                   wall_clock_budget=None, record_wall_time=False)
        x_lim, _ = vbmm_run(problem, more, x_k)
    else:
        x_lim = x_k
    dist = np.array([relative_distance(v, x_lim) for v in iterates])
    return MajorantBenchmark(solver_cfg.majorant.kind.label, K, hist.stop_reason, dist,
                             np.asarray(hist.wall_time), np.asarray(hist.fwd_calls),
                             np.asarray(hist.adj_calls), x_lim, tolerance)


def run_benchmark(cfg: RunConfig, data: SimulatedData, out_dir=None, majorants=None):
    """Benchmark every listed majorant on the same data; optionally write
    ``curves.csv`` and ``summary.csv``."""
    names = list(majorants if majorants is not None else cfg.benchmark.majorants)
    if len(names) < 2:
        raise ConfigError("benchmark needs at least two majorants", field="benchmark.majorants")
    labels = [MajorantKind.parse(n).label for n in names]
    if len(set(labels)) != len(labels):
        raise ConfigError("benchmark majorants must be distinct", field="benchmark.majorants")
    problem = build_problem(cfg, data)
    results = []
    for label in labels:
        scfg = cfg.solver_config(label, problem.model.rho)
        results.append(benchmark_majorant(problem, scfg, cfg.benchmark.tolerance,
                                          cfg.benchmark.limit_factor))
    if out_dir is not None:
        d = Path(out_dir)
        rows = []
        for r in results:
            for k in range(r.rel_distance.size):
                rows.append((r.majorant, k, r.wall_time[k], r.rel_distance[k],
                             r.fwd_calls[k], r.adj_calls[k]))
        write_csv(d / "curves.csv",
                  ("majorant", "iter", "wall_time_s", "rel_distance", "fwd_calls", "adj_calls"),
                  rows)
        write_csv(d / "summary.csv",
                  ("majorant", "K", "stop_reason", "iters_to_tol", "time_to_tol_s",
                   "fwd_calls_to_tol", "adj_calls_to_tol"),
                  [(r.majorant, r.K, r.stop_reason, r.iters_to_tol, r.time_to_tol,
                    r.fwd_to_tol, r.adj_to_tol) for r in results])
    return results


def load_or_simulate(cfg: RunConfig, out_dir, seed: Optional[int] = None) -> SimulatedData:
    d = Path(out_dir) / SIM_DIR
    if (d / "meta.json").exists():
        return load_simulation(d)
    data = simulate_from_config(cfg, seed)
    save_simulation(d, data)
    return data
