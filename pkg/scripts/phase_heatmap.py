"""BP and spectral overlap over the (epsilon, eta) plane with the predicted boundary.

Writes heatmap_bp.csv, heatmap_spectral.csv (rows eta, columns epsilon),
boundary.csv and rows.csv. The default 5 x 5 grid with 10 replicates takes
roughly 40 minutes on one core.
"""

import argparse

import numpy as np

from dsbm.bench import RunConfig, run_heatmap
from dsbm.bp import BpOptions


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="results/heatmap")
    ap.add_argument("--epsilons", default="0.1,0.3,0.5,0.7,0.9")
    ap.add_argument("--etas", default="0,0.25,0.5,0.75,0.95")
    ap.add_argument("--replicates", type=int, default=10)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    cfg = RunConfig(epsilons=[float(x) for x in args.epsilons.split(",")],
                    etas=[float(x) for x in args.etas.split(",")],
                    replicates=args.replicates, algorithm="both",
                    bp=BpOptions(max_iters=300), workers=args.workers, out_dir=args.out_dir)
    res = run_heatmap(cfg)
    np.set_printoptions(precision=3, suppress=True)
    for alg, mat in res.summary["heatmaps"].items():
        print(alg)
        print(np.array(mat))


if __name__ == "__main__":
    main()
