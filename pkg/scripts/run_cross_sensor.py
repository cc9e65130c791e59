"""Cross-sensor suite: detector trained on sensor A vs detector trained only
on A patches restyled towards 100 sensor-B lives, both tested on B."""

import argparse
import logging
from pathlib import Path

from umg.experiments import cross_sensor_experiment, desk_protocol


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", type=Path, default=Path("runs/cross_sensor"))
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--source", default="A")
    ap.add_argument("--target", default="B")
    ap.add_argument("--target-lives", type=int, default=100)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    result = cross_sensor_experiment(args.root, [int(s) for s in args.seeds.split(",")], desk_protocol(),
                                     args.source, args.target, args.target_lives)
    for run in result.runs:
        print(f"seed {run.seed}: ACE {run.baseline.ace:.3f} -> {run.umg.ace:.3f}, "
              f"TDR@1% {run.baseline.tdr['0.01']:.3f} -> {run.umg.tdr['0.01']:.3f}")
    print(f"mean ACE {result.baseline_ace:.3f} -> {result.umg_ace:.3f}, {result.seconds / 60:.1f} min")


if __name__ == "__main__":
    main()
