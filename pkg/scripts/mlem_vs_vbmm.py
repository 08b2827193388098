"""Unregularized ML-EM next to penalized VBMM on the same sinogram.

Prints NRMSE against the phantom (on the mask) every ``--every`` iterations.

    python3 scripts/mlem_vs_vbmm.py --iters 500 --majorant maj4
"""

import argparse
import dataclasses

from vbmm.bench import build_problem, simulate_from_config
from vbmm.config import DEFAULT_CONFIG_TEXT, load_config, parse_config
from vbmm.solver import initial_image, mlem_run, nrmse, vbmm_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--every", type=int, default=50)
    ap.add_argument("--majorant", default="maj4")
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else parse_config(DEFAULT_CONFIG_TEXT)
    data = simulate_from_config(cfg)
    problem = build_problem(cfg, data)
    ref = problem.restrict(data.phantom.values)
    mlem = []
    mlem_run(problem.model, initial_image(problem.model), args.iters,
             callback=lambda k, x: mlem.append(nrmse(x, ref)))
    scfg = dataclasses.replace(cfg.solver_config(args.majorant, problem.model.rho),
                               max_iters=args.iters, step_tol=0.0)
    _, h = vbmm_run(problem, scfg, reference=ref)
    print(f"{'iter':>6} {'ML-EM':>8} {scfg.majorant.kind.label:>8}")
    for k in range(0, args.iters + 1, args.every):
        print(f"{k:6d} {mlem[k]:8.4f} {h.nrmse[k]:8.4f}")


if __name__ == "__main__":
    main()
