"""Leave-one-material-out suite: baseline vs UMG-augmented detector on the
desk dataset (generated under --root on first use)."""

import argparse
import json
import logging
from pathlib import Path

from umg.experiments import desk_protocol, loo_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", type=Path, default=Path("runs/loo"))
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--live-synth-ratio", type=float, default=0.0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = desk_protocol(args.workers, live_synth_ratio=args.live_synth_ratio)
    result = loo_experiment(args.root, [int(s) for s in args.seeds.split(",")], cfg)
    for row in result.rows():
        print(f"seed {row['seed']} held out {row['held_out']}: TDR@1% {row['baseline_tdr@0.01']:.3f} -> "
              f"{row['umg_tdr@0.01']:.3f}")
    print(f"mean gain {100 * result.mean_gain:+.1f} pp, worst fold {100 * result.worst_delta:+.1f} pp, "
          f"{result.seconds / 60:.1f} min")
    (args.root / "loo_results.json").write_text(json.dumps(result.rows(), indent=1) + "\n")


if __name__ == "__main__":
    main()
