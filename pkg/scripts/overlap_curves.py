"""BP overlap versus epsilon for eta in {0, 0.5, 0.9} at n=512, T=40, c=16, k=2.

Prints the estimated transition next to the predicted threshold for each eta.
The default grid (step 0.025 over [0.3, 1.0], 10 replicates) takes a few hours
on one core; narrow it with --eps-min/--eps-max or use more --workers.
"""

import argparse
import json

import numpy as np

from dsbm.bench import RunConfig, run_sweep
from dsbm.bp import BpOptions


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="results/overlap_curves")
    ap.add_argument("--eps-min", type=float, default=0.3)
    ap.add_argument("--eps-max", type=float, default=1.0)
    ap.add_argument("--step", type=float, default=0.025)
    ap.add_argument("--replicates", type=int, default=10)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--max-iters", type=int, default=300)
    args = ap.parse_args()

    eps = np.round(np.arange(args.eps_min, args.eps_max + 1e-9, args.step), 6).tolist()
    cfg = RunConfig(epsilons=eps, etas=[0.0, 0.5, 0.9], replicates=args.replicates,
                    bp=BpOptions(max_iters=args.max_iters), workers=args.workers,
                    out_dir=args.out_dir)
    res = run_sweep(cfg)
    report = {eta: {"estimated": res.summary["transitions"]["bp"][eta],
                    "predicted": res.summary["theory"][eta]["epsilon_critical"]}
              for eta in res.summary["theory"]}
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
