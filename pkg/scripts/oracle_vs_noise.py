"""Matched-filter accuracy of the synthetic task as the noise level grows.

Gives the ceiling a learned model can hope for at each noise level.

    python scripts/oracle_vs_noise.py --noise 0 0.25 0.5 1.0
"""
import argparse
import dataclasses

import numpy as np

from mstr.data import generate_synthetic_dataset, matched_filter_predict
from mstr.experiments import BENEFIT_SPEC


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 1.0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--split", default="test")
    args = ap.parse_args()

    print("noise_std  oracle_wa")
    for noise in args.noise:
        spec = dataclasses.replace(BENEFIT_SPEC, noise_std=noise)
        accs = []
        for seed in args.seeds:
            ds = generate_synthetic_dataset(spec, seed, 3, 1)
            hits = [matched_filter_predict(s.features, s.valid_len, ds.templates) == s.label for s in ds[args.split]]
            accs.append(np.mean(hits))
        print(f"{noise:9.2f}  {np.mean(accs):.4f}")


if __name__ == "__main__":
    main()
