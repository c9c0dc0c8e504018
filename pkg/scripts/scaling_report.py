"""Attention cost versus sequence length: analytic formulas and counted MACs.

    python scripts/scaling_report.py --F 8 --T 81 162 324 648 --out results/scaling.csv
"""
import argparse
from pathlib import Path

from mstr.complexity import scaling_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, nargs="+", default=[81, 162, 324, 648, 1296])
    ap.add_argument("--F", type=int, default=8)
    ap.add_argument("--p", type=int, default=3)
    ap.add_argument("--L", type=int, default=4)
    ap.add_argument("--heads", type=int, default=1)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    rep = scaling_report(args.T, args.F, args.p, args.L, args.heads)
    print(rep.to_text(), end="")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(rep.to_csv())
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
