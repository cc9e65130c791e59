"""Mixture suite: a detector trained on materials A and B is fine-tuned on
UMG syntheses of A and B and tested on their parametric blend."""

import argparse
import logging
from pathlib import Path

from umg.experiments import desk_protocol, mixture_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", type=Path, default=Path("runs/mixture"))
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("-a", default="ma")
    ap.add_argument("-b", default="mb")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    result = mixture_experiment(args.root, [int(s) for s in args.seeds.split(",")], desk_protocol(), args.a, args.b)
    for run in result.runs:
        print(f"seed {run.seed}: TDR@1% {run.before.tdr['0.01']:.3f} -> {run.after.tdr['0.01']:.3f}")
    print(f"mean {result.before_tdr:.3f} -> {result.after_tdr:.3f}, {result.seconds / 60:.1f} min")


if __name__ == "__main__":
    main()
