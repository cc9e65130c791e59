"""Command-line entry point.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
Every random choice derives from ``--seed``; ``--threads 1`` (or
``UMG_THREADS=1``) gives bitwise-reproducible outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import synth
from .autodiff import DimensionError, NumericError
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .data import PatchBank, concat_banks, load_patches
from .detection import score_bank, train_detector
from .io import DatasetManifest, ImageFormatError, ManifestError, load_manifest, save_manifest
from .networks import CheckpointError, build_encoder, load_checkpoint, save_checkpoint
from .pipeline import (
    HygieneError,
    SynthesisPlan,
    TrainingError,
    augment,
    load_umg,
    pretrain_encoder,
    save_umg,
    synthesize_live_set,
    synthesize_spoof_set,
    train_umg,
    write_synthetic,
)
from .protocols import aggregate, evaluate, run_cross_sensor, run_leave_one_out
from .report import feature_scatter, pooled_features, read_scores_csv, score_histogram, write_scores_csv, write_summary
from .seeding import derive_seed

log = logging.getLogger("umg")

VALIDATION_ERRORS = (ConfigError, ManifestError, ImageFormatError, CheckpointError)
RUNTIME_ERRORS = (TrainingError, HygieneError, NumericError, DimensionError, OSError, RuntimeError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _csv_list(text: str) -> list[str]:
    return [t for t in text.split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="base seed for every random choice (default 0)")
    common.add_argument("--threads", type=int, help="worker processes / BLAS threads (UMG_THREADS overrides)")
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="umg", description="Style-transfer augmentation workbench for fingerprint spoof detection")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic live/spoof dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--subjects", type=int)
    p.add_argument("--materials", type=int)
    p.add_argument("--sensors", type=_csv_list, help="comma-separated sensor ids from the built-in set (A,B)")
    p.add_argument("--impressions", type=int)
    p.add_argument("--size", type=int)

    p = sub.add_parser("pretrain-encoder", parents=[common], help="train the encoder as a texture classifier")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint file to write")
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--sensor")

    p = sub.add_parser("train-umg", parents=[common], help="train a spoof or live UMG wrapper")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint file to write")
    p.add_argument("--role", choices=("spoof", "live"), default="spoof")
    p.add_argument("--sensor")
    p.add_argument("--exclude", type=_csv_list, default=[], help="materials to leave out")
    p.add_argument("--encoder", type=Path, help="pretrained encoder checkpoint")
    p.add_argument("--steps", type=int)

    p = sub.add_parser("synthesize", parents=[common], help="write synthetic patches from a trained UMG")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--sensor")
    p.add_argument("--exclude", type=_csv_list, default=[])

    p = sub.add_parser("train-detector", parents=[common], help="train a spoof detector")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint file to write")
    p.add_argument("--synthetic", type=Path, action="append", default=[], help="synthetic set directory (repeatable)")
    p.add_argument("--sensor")
    p.add_argument("--exclude", type=_csv_list, default=[])
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("evaluate", parents=[common], help="score the test split with a detector")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sensor")
    p.add_argument("--material", help="only this spoof material (plus all lives)")

    p = sub.add_parser("loo", parents=[common], help="leave-one-material-out protocol")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--materials", type=_csv_list, help="held-out folds to run (default: all)")
    p.add_argument("--sensor")

    p = sub.add_parser("cross-sensor", parents=[common], help="cross-sensor transfer protocol")
    p.add_argument("--data", type=Path, required=True, help="dataset holding the source sensor")
    p.add_argument("--target-data", type=Path, help="dataset holding the target sensor (default: --data)")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--target-lives", type=int)

    p = sub.add_parser("report", parents=[common], help="histograms and a feature scatter from score files")
    p.add_argument("--in", dest="inp", type=Path, required=True, help="directory with *.csv score files")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--data", type=Path, help="dataset for the feature scatter")
    p.add_argument("--max-patches", type=int, default=400)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    raw = cfg.to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
    env = os.environ.get("UMG_THREADS")
    if env is not None:
        try:
            raw["threads"] = int(env)
        except ValueError:
            raise ConfigError(f"UMG_THREADS must be an integer, got {env!r}") from None
    elif args.threads is not None:
        raw["threads"] = args.threads
    if args.command == "gen-data":
        for key in ("subjects", "materials", "sensors", "impressions", "size"):
            if getattr(args, key) is not None:
                raw["data"][key] = getattr(args, key)
    if getattr(args, "steps", None) is not None:
        raw["umg"]["steps"] = args.steps
    if getattr(args, "alpha", None) is not None:
        raw["umg"]["alpha"] = args.alpha
    if getattr(args, "n", None) is not None:
        raw["umg"]["n_synth"] = args.n
    if getattr(args, "epochs", None) is not None and args.command == "train-detector":
        raw["detector"]["epochs"] = args.epochs
    if getattr(args, "target_lives", None) is not None:
        raw["protocol"]["target_lives"] = args.target_lives
    return config_from_dict(raw)


def _manifest(data_dir: Path) -> DatasetManifest:
    path = data_dir / "manifest.csv"
    if not path.exists():
        raise ConfigError(f"{data_dir} has no manifest.csv")
    return load_manifest(path)


def _select(man: DatasetManifest, split: str | None = None, sensor: str | None = None,
            exclude: list[str] | None = None, material: str | None = None) -> DatasetManifest:
    recs = [r for r in man.records
            if (split is None or r.split == split) and (sensor is None or r.sensor == sensor)
            and not (r.material and r.material in (exclude or []))
            and (material is None or r.material in (None, material))]
    return DatasetManifest(recs, man.root)


def _bank(man: DatasetManifest, cfg: RunConfig, **sel) -> PatchBank:
    chosen = _select(man, **sel)
    if not len(chosen):
        raise ConfigError(f"no records match {sel}")
    return load_patches(chosen, cfg.detector.max_patches)


def _single_sensor(man: DatasetManifest, sensor: str | None) -> str | None:
    sensors = man.sensors()
    if sensor is not None:
        if sensor not in sensors:
            raise ConfigError(f"sensor {sensor!r} not in dataset ({', '.join(sensors)})")
        return sensor
    if len(sensors) > 1:
        raise ConfigError(f"dataset has sensors {', '.join(sensors)}; pick one with --sensor")
    return None


def _write_config(cfg: RunConfig, out: Path, command: str) -> None:
    body = {"command": command, **cfg.to_dict()}
    body.pop("threads")  # execution detail, not part of the result
    (out / "config.json").write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")


def _check_out_file(path: Path) -> None:
    if path.exists() and path.is_dir():
        raise ConfigError(f"--out {path} is a directory; expected a file path")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args, cfg: RunConfig) -> None:
    unknown = [s for s in cfg.data.sensors if s not in synth.DEFAULT_SENSORS]
    if unknown:
        raise ConfigError(f"unknown sensor id(s) {unknown}; built-in sensors are {sorted(synth.DEFAULT_SENSORS)}")
    dcfg = synth.DatasetConfig(n_subjects=cfg.data.subjects, materials=synth.material_catalog(cfg.data.materials,
                                                                                            cfg.seed),
                               sensors=[synth.DEFAULT_SENSORS[s] for s in cfg.data.sensors],
                               impressions=cfg.data.impressions, seed=cfg.seed, size=cfg.data.size,
                               test_fraction=cfg.data.test_fraction)
    man = synth.gen_dataset(dcfg, args.out)
    print(f"wrote {len(man)} images to {args.out}")


def cmd_pretrain_encoder(args, cfg: RunConfig) -> None:
    _check_out_file(args.out)
    man = _manifest(args.data)
    sensor = _single_sensor(man, args.sensor)
    bank = _bank(man, cfg, split="train", sensor=sensor)
    enc, history = pretrain_encoder(bank, derive_seed(cfg.seed, "pretrain-encoder"), epochs=args.epochs)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out, {"encoder": enc}, {"seed": cfg.seed, "epochs": args.epochs,
                                                 "final_loss": history[-1]["loss"] if history else None})
    print(f"encoder checkpoint {args.out} ({len(history)} steps)")


def cmd_train_umg(args, cfg: RunConfig) -> None:
    _check_out_file(args.out)
    man = _manifest(args.data)
    sensor = _single_sensor(man, args.sensor)
    bank = _bank(man, cfg, split="train", sensor=sensor, exclude=args.exclude)
    encoder = build_encoder(mode="desk-pretrained", checkpoint=args.encoder) if args.encoder else None
    if args.role == "spoof":
        groups = bank.subset(bank.label == 1).by_material()
    else:
        groups = {"live": bank.subset(bank.label == 0).pixels}
    model = train_umg(groups, cfg.umg.umg_config(), derive_seed(cfg.seed, "umg", args.role), role=args.role,
                      encoder=encoder)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_umg(model, args.out, {"seed": cfg.seed, "excluded": args.exclude, "sensor": sensor})
    print(f"UMG ({args.role}, groups {', '.join(model.groups)}) trained for {model.steps} steps -> {args.out}")


def cmd_synthesize(args, cfg: RunConfig) -> None:
    model = load_umg(args.model)
    man = _manifest(args.data)
    sensor = _single_sensor(man, args.sensor)
    bank = _bank(man, cfg, split="train", sensor=sensor, exclude=args.exclude)
    plan = SynthesisPlan(cfg.umg.n_synth, cfg.umg.alpha, derive_seed(cfg.seed, "synthesize", model.role))
    out = synthesize_spoof_set(model, bank, plan) if model.role == "spoof" else synthesize_live_set(model, bank, plan)
    args.out.mkdir(parents=True, exist_ok=True)
    syn_man = write_synthetic(out, args.out)
    save_manifest(syn_man, args.out / "manifest.csv")
    _write_config(cfg, args.out, "synthesize")
    print(f"wrote {len(out)} synthetic {model.role} patches to {args.out}")


def cmd_train_detector(args, cfg: RunConfig) -> None:
    _check_out_file(args.out)
    man = _manifest(args.data)
    sensor = _single_sensor(man, args.sensor)
    real = _select(man, split="train", sensor=sensor, exclude=args.exclude)
    synthetic = [_manifest(d) for d in args.synthetic]
    merged = augment(real, synthetic)
    banks = [load_patches(real, cfg.detector.max_patches)] + [load_patches(s) for s in synthetic]
    bank = concat_banks(banks)
    trained = train_detector(bank, derive_seed(cfg.seed, "detector"), cfg.detector.detector_config())
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out, {"detector": trained.detector},
                    {"seed": cfg.seed, "epochs": cfg.detector.epochs, "train_records": len(merged),
                     "final_loss": trained.log[-1]["loss"] if trained.log else None})
    print(f"detector trained on {len(bank)} patches ({len(merged)} records) -> {args.out}")


def cmd_evaluate(args, cfg: RunConfig) -> None:
    nets = load_checkpoint(args.model)
    if "detector" not in nets:
        raise CheckpointError(f"{args.model} holds no detector")
    man = _manifest(args.data)
    sensor = _single_sensor(man, args.sensor)
    bank = _bank(man, cfg, split="test", sensor=sensor, material=args.material)
    rep = evaluate(score_bank(nets["detector"], bank), "evaluate", "detector", cfg.seed, args.material, None, sensor)
    args.out.mkdir(parents=True, exist_ok=True)
    write_scores_csv([rep], args.out / "scores.csv")
    write_summary([rep], args.out / "summary.json")
    score_histogram(rep, args.out / "histogram.svg")
    _write_config(cfg, args.out, "evaluate")
    print(f"TDR@FDR=1% {rep.tdr['0.01']:.3f}  ACE {rep.ace:.3f}  EER {rep.eer:.3f}")


def cmd_loo(args, cfg: RunConfig) -> None:
    man = _manifest(args.data)
    sensor = _single_sensor(man, args.sensor)
    materials = man.materials()
    if len(materials) < 2:
        raise ConfigError("leave-one-out needs a dataset with at least 2 materials")
    folds = args.materials or materials
    missing = sorted(set(folds) - set(materials))
    if missing:
        raise ConfigError(f"unknown material(s) {missing}")
    train = _bank(man, cfg, split="train", sensor=sensor)
    test = _bank(man, cfg, split="test", sensor=sensor)
    pairs = run_leave_one_out(train, test, cfg.seed, cfg.protocol_config(), folds)
    args.out.mkdir(parents=True, exist_ok=True)
    for base, umg in pairs:
        write_scores_csv([base, umg], args.out / f"report_{base.held_out}.csv")
        for rep in (base, umg):
            score_histogram(rep, args.out / f"hist_{rep.held_out}_{rep.arm}.svg")
    flat = [r for pair in pairs for r in pair]
    extra = {}
    for arm in ("baseline", "umg"):
        reps = [r for r in flat if r.arm == arm]
        mean, sd = aggregate(reps)
        extra[f"{arm}_weighted_tdr@0.01"] = {"mean": mean, "sd": sd}
    write_summary(flat, args.out / "summary.json", extra)
    _write_config(cfg, args.out, "loo")
    for base, umg in pairs:
        print(f"held out {base.held_out}: TDR@FDR=1% baseline {base.tdr['0.01']:.3f} -> UMG {umg.tdr['0.01']:.3f}")


def cmd_cross_sensor(args, cfg: RunConfig) -> None:
    if args.source == args.target:
        raise ConfigError("source and target sensor must differ")
    src_man = _manifest(args.data)
    tgt_man = _manifest(args.target_data) if args.target_data else src_man
    source = _bank(src_man, cfg, split="train", sensor=args.source)
    tgt_train = _select(tgt_man, split="train", sensor=args.target)
    lives = [r for r in tgt_train.records if r.label == "live"]
    if len(lives) < cfg.protocol.target_lives:
        raise ConfigError(f"target sensor has {len(lives)} training lives, {cfg.protocol.target_lives} requested")
    order = np.random.default_rng(derive_seed(cfg.seed, "target-lives")).permutation(len(lives))
    chosen = DatasetManifest([lives[i] for i in sorted(order[:cfg.protocol.target_lives])], tgt_man.root)
    target_lives = load_patches(chosen, cfg.detector.max_patches)
    target_test = _bank(tgt_man, cfg, split="test", sensor=args.target)
    base, umg = run_cross_sensor(source, target_lives, target_test, cfg.seed, cfg.protocol_config())
    args.out.mkdir(parents=True, exist_ok=True)
    write_scores_csv([base, umg], args.out / "report_cross_sensor.csv")
    for rep in (base, umg):
        score_histogram(rep, args.out / f"hist_{rep.arm}.svg")
    write_summary([base, umg], args.out / "summary.json")
    _write_config(cfg, args.out, "cross-sensor")
    print(f"{args.source} -> {args.target}: ACE baseline {base.ace:.3f} -> UMG {umg.ace:.3f}; "
          f"TDR@FDR=1% {base.tdr['0.01']:.3f} -> {umg.tdr['0.01']:.3f}")


def cmd_report(args, cfg: RunConfig) -> None:
    files = sorted(args.inp.glob("*.csv"))
    reports = []
    for f in files:
        try:
            reports.extend(read_scores_csv(f))
        except ValueError:
            continue  # not a score file
    if not reports and args.data is None:
        raise ConfigError(f"no score files in {args.inp}")
    args.out.mkdir(parents=True, exist_ok=True)
    for i, rep in enumerate(reports):
        tag = "_".join(x for x in (rep.protocol, rep.held_out or "", rep.arm, f"s{rep.seed}") if x)
        score_histogram(rep, args.out / f"hist_{i:02d}_{tag}.svg")
    if reports:
        write_summary(reports, args.out / "summary.json")
    if args.data is not None:
        man = _manifest(args.data)
        test = load_patches(_select(man, split="test"), cfg.detector.max_patches)
        rng = np.random.default_rng(derive_seed(cfg.seed, "report-scatter"))
        idx = np.sort(rng.permutation(len(test))[:args.max_patches])
        sub = test.subset(idx)
        enc = build_encoder(derive_seed(cfg.seed, "encoder"))
        labels = [m or "live" for m in sub.material]
        feature_scatter(pooled_features(enc, sub.pixels), labels, args.out / "features_pca.svg")
    print(f"{len(reports)} report(s) rendered to {args.out}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain-encoder": cmd_pretrain_encoder,
    "train-umg": cmd_train_umg,
    "synthesize": cmd_synthesize,
    "train-detector": cmd_train_detector,
    "evaluate": cmd_evaluate,
    "loo": cmd_loo,
    "cross-sensor": cmd_cross_sensor,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = _resolve_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"umg {args.command}: {exc}", file=sys.stderr)
        return 1
    try:
        with threadpool_limits(limits=cfg.threads):
            COMMANDS[args.command](args, cfg)
    except VALIDATION_ERRORS as exc:
        print(f"umg {args.command}: {exc}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"umg {args.command}: failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
