"""Compare the solver majorants on the desk-scale problem.

Runs each majorant to its stopping rule, approximates the limit point with
``limit_factor`` times as many iterations, and prints iterations, time and
operator calls needed to reach the relative-distance tolerance.

    python3 scripts/run_benchmark.py --config configs/default.yaml --out out
"""

import argparse

from vbmm.bench import load_or_simulate, run_benchmark
from vbmm.config import DEFAULT_CONFIG_TEXT, load_config, parse_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out", default="out")
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else parse_config(DEFAULT_CONFIG_TEXT)
    data = load_or_simulate(cfg, args.out)
    results = run_benchmark(cfg, data, f"{args.out}/benchmark")
    print(f"{'majorant':8} {'K':>6} {'iters':>6} {'time_s':>8} {'fwd':>6} {'adj':>6}")
    for r in results:
        print(f"{r.majorant:8} {r.K:6d} {r.iters_to_tol:6d} {r.time_to_tol:8.3f} "
              f"{r.fwd_to_tol:6d} {r.adj_to_tol:6d}")


if __name__ == "__main__":
    main()
