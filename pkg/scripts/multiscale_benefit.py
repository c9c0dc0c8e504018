"""Train L=4 and L=1 models on the multi-scale synthetic task and compare test WA.

Takes roughly five to ten minutes on one CPU core with the defaults.

    python scripts/multiscale_benefit.py --levels 4 3 2 1 --out results/benefit.csv
"""
import argparse
import dataclasses
from pathlib import Path

from mstr.experiments import BENEFIT_SPEC, BENEFIT_TRAIN, multiscale_benefit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, nargs="+", default=[4, 1])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--noise", type=float, default=BENEFIT_SPEC.noise_std)
    ap.add_argument("--epochs", type=int, default=BENEFIT_TRAIN.epochs)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    spec = dataclasses.replace(BENEFIT_SPEC, noise_std=args.noise)
    tc = dataclasses.replace(BENEFIT_TRAIN, epochs=args.epochs)
    res = multiscale_benefit(args.seeds, args.levels, spec=spec, train_config=tc, log=print)
    for L in args.levels:
        print(f"L={L}: median test WA {res.median(L):.4f}")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(res.to_csv())
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
