"""Eigenvalues of B' for one instance at the detectable point (n=300, c=3, eps=0.05, eta=0.5, T=5).

Writes spectrum.txt (real, imaginary per line) and spectrum.json with the bulk
radius and the real outliers. Takes about a minute and a half (dense 6000 x 6000).
"""

import argparse
import json

from dsbm.bench import SpectrumConfig, dump_spectrum


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="results/spectrum")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--T", type=int, default=5)
    args = ap.parse_args()
    rep = dump_spectrum(SpectrumConfig(T=args.T, seed=args.seed, out_dir=args.out_dir))
    print(json.dumps({"bulk_radius": rep.bulk_radius,
                      "real_outliers": rep.real_outliers.tolist()}, indent=2))


if __name__ == "__main__":
    main()
