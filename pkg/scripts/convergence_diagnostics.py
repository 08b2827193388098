"""Descent and stationarity diagnostics for every solver majorant.

For each majorant the solver runs until ``||w^k|| <= tol * ||w^1||``. The
script reports the smallest objective drop and sufficient-decrease slack
(both scaled by ``1 + |F|``) and the range of ``||w^{k+1}|| / ||x^{k+1} - x^k||``.

    python3 scripts/convergence_diagnostics.py --tol 1e-6
"""

import argparse
import dataclasses

import numpy as np

from vbmm.bench import build_problem, simulate_from_config
from vbmm.config import DEFAULT_CONFIG_TEXT, load_config, parse_config
from vbmm.solver import SOLVER_MAJORANTS, vbmm_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--tol", type=float, default=1e-6)
    ap.add_argument("--max-iters", type=int, default=20_000)
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else parse_config(DEFAULT_CONFIG_TEXT)
    problem = build_problem(cfg, simulate_from_config(cfg))
    print(f"{'majorant':8} {'iters':>6} {'stop':>12} {'min drop':>10} {'min slack':>10} "
          f"{'ratio min':>10} {'ratio max':>10} {'last 100':>10}")
    for kind in SOLVER_MAJORANTS:
        scfg = dataclasses.replace(cfg.solver_config(kind.label, problem.model.rho),
                                   max_iters=args.max_iters, step_tol=0.0,
                                   residual_tol=args.tol)
        _, h = vbmm_run(problem, scfg)
        F = np.asarray(h.objective)
        scale = 1 + np.abs(F[:-1])
        ratio = np.asarray(h.residual_w[1:]) / np.asarray(h.step_norm[1:])
        print(f"{kind.label:8} {h.n_iters:6d} {h.stop_reason:>12} "
              f"{np.min((F[:-1] - F[1:]) / scale):10.2e} "
              f"{np.min(np.asarray(h.slack[1:]) / scale):10.2e} "
              f"{ratio.min():10.3g} {ratio.max():10.3g} {ratio[-100:].max():10.3g}")


if __name__ == "__main__":
    main()
