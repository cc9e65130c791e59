"""Seeded desk-scale experiment suites built on the protocols: the
leave-one-material-out comparison, the two-sensor transfer and the
two-material mixture check. Each suite generates its dataset (or reuses
one on disk), runs every seed and returns plain result rows."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import load_patches
from .detection import DetectorConfig
from .io import DatasetManifest, load_manifest
from .pipeline import UmgConfig
from .protocols import EvalReport, ProtocolConfig, run_cross_sensor, run_leave_one_out, run_mixture
from .seeding import derive_seed
from .synth import DEFAULT_MATERIALS, DEFAULT_SENSORS, DatasetConfig, MaterialProfile, gen_dataset, mix_materials

log = logging.getLogger(__name__)

MIXTURE_ID = "mix"


def desk_protocol(workers: int | None = None, **overrides) -> ProtocolConfig:
    """Protocol settings used by the desk suites: 100 UMG steps, 6 detector
    epochs, one worker per available core (at most 4)."""
    if workers is None:
        workers = max(1, min(4, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else 1))
    cfg = ProtocolConfig(umg=UmgConfig(max_steps=100), detector=DetectorConfig(epochs=6), workers=workers)
    return replace(cfg, **overrides)


def _dataset(root: Path, config: DatasetConfig) -> DatasetManifest:
    manifest = root / "manifest.csv"
    if not manifest.exists():
        gen_dataset(config, root)
    return load_manifest(manifest)


def _banks(man: DatasetManifest, sensor: str | None = None, max_patches: int = 8):
    def pick(split):
        recs = [r for r in man.records if r.split == split and (sensor is None or r.sensor == sensor)]
        return load_patches(DatasetManifest(recs, man.root), max_patches)

    return pick("train"), pick("test")


# ---------------------------------------------------------------------------
# leave one material out


def loo_dataset_config(seed: int = 0) -> DatasetConfig:
    """20 training subjects and 60 test subjects, so a single held-out
    image moves TDR by under one point (120 test spoofs per material)."""
    return DatasetConfig(n_subjects=80, seed=seed, test_fraction=0.75)


@dataclass
class LooFold:
    seed: int
    held_out: str
    baseline: EvalReport
    umg: EvalReport

    @property
    def delta(self) -> float:
        return self.umg.tdr["0.01"] - self.baseline.tdr["0.01"]


@dataclass
class LooResult:
    folds: list[LooFold]
    seconds: float
    workers: int

    @property
    def mean_gain(self) -> float:
        return float(np.mean([f.delta for f in self.folds]))

    @property
    def worst_delta(self) -> float:
        return float(min(f.delta for f in self.folds))

    def rows(self) -> list[dict]:
        return [{"seed": f.seed, "held_out": f.held_out, "baseline_tdr@0.01": f.baseline.tdr["0.01"],
                 "umg_tdr@0.01": f.umg.tdr["0.01"], "baseline_ace": f.baseline.ace, "umg_ace": f.umg.ace}
                for f in self.folds]


def loo_experiment(root: str | Path, seeds=(0, 1, 2), cfg: ProtocolConfig | None = None,
                   data_seed: int = 0) -> LooResult:
    cfg = cfg or desk_protocol()
    t0 = time.time()
    train, test = _banks(_dataset(Path(root), loo_dataset_config(data_seed)))
    folds = []
    for seed in seeds:
        for base, umg in run_leave_one_out(train, test, seed, cfg):
            folds.append(LooFold(seed, base.held_out, base, umg))
            log.info("seed %d held out %s: %.3f -> %.3f", seed, base.held_out, base.tdr["0.01"], umg.tdr["0.01"])
    return LooResult(folds, time.time() - t0, cfg.workers)


# ---------------------------------------------------------------------------
# cross sensor


def cross_sensor_dataset_config(seed: int = 0) -> DatasetConfig:
    """Sensors A and B, 50 training subjects per sensor with two live
    impressions each (100 target lives available)."""
    return DatasetConfig(n_subjects=100, seed=seed, test_fraction=0.5,
                         sensors=[DEFAULT_SENSORS["A"], DEFAULT_SENSORS["B"]])


@dataclass
class CrossSensorRun:
    seed: int
    baseline: EvalReport
    umg: EvalReport


@dataclass
class CrossSensorResult:
    runs: list[CrossSensorRun]
    seconds: float

    @property
    def baseline_ace(self) -> float:
        return float(np.mean([r.baseline.ace for r in self.runs]))

    @property
    def umg_ace(self) -> float:
        return float(np.mean([r.umg.ace for r in self.runs]))


def pick_target_lives(man: DatasetManifest, sensor: str, n: int, seed: int) -> DatasetManifest:
    lives = [r for r in man.records if r.split == "train" and r.sensor == sensor and r.label == "live"]
    if len(lives) < n:
        raise ValueError(f"sensor {sensor} has {len(lives)} training lives, {n} requested")
    order = np.random.default_rng(derive_seed(seed, "target-lives")).permutation(len(lives))
    return DatasetManifest([lives[i] for i in sorted(order[:n])], man.root)


def cross_sensor_experiment(root: str | Path, seeds=(0, 1, 2), cfg: ProtocolConfig | None = None,
                            source: str = "A", target: str = "B", target_lives: int = 100,
                            data_seed: int = 0) -> CrossSensorResult:
    cfg = cfg or desk_protocol()
    t0 = time.time()
    man = _dataset(Path(root), cross_sensor_dataset_config(data_seed))
    src_train, _ = _banks(man, source)
    _, tgt_test = _banks(man, target)
    runs = []
    for seed in seeds:
        lives = load_patches(pick_target_lives(man, target, target_lives, seed))
        base, umg = run_cross_sensor(src_train, lives, tgt_test, seed, cfg)
        runs.append(CrossSensorRun(seed, base, umg))
        log.info("seed %d %s->%s: ACE %.3f -> %.3f", seed, source, target, base.ace, umg.ace)
    return CrossSensorResult(runs, time.time() - t0)


# ---------------------------------------------------------------------------
# mixture of two known materials


# Two low-contrast materials that differ mainly in brightness. A detector
# trained on both can separate them from lives by mean level alone, so
# their 1:1 blend (centred brightness) is not covered by the training data
# even though its statistics sit between the two.
MIXTURE_MATERIALS = {
    "ma": MaterialProfile("ma", blur=0.8, contrast_gain=1.5, contrast_offset=-0.2),
    "mb": MaterialProfile("mb", blur=0.8, contrast_gain=0.5, contrast_offset=0.2),
}


def mixture_dataset_config(a: str = "ma", b: str = "mb", ratio: float = 0.5, seed: int = 0) -> DatasetConfig:
    """Materials ``a``, ``b`` (looked up in the default and mixture
    catalogues) and their parameter-space blend; the blend is only ever used
    at test time."""
    catalog = {**DEFAULT_MATERIALS, **MIXTURE_MATERIALS}
    ma, mb = catalog[a], catalog[b]
    return DatasetConfig(n_subjects=60, seed=seed, test_fraction=0.5,
                         materials=[ma, mb, mix_materials(ma, mb, ratio, MIXTURE_ID)])


@dataclass
class MixtureRun:
    seed: int
    before: EvalReport
    after: EvalReport


@dataclass
class MixtureResult:
    runs: list[MixtureRun] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def before_tdr(self) -> float:
        return float(np.mean([r.before.tdr["0.01"] for r in self.runs]))

    @property
    def after_tdr(self) -> float:
        return float(np.mean([r.after.tdr["0.01"] for r in self.runs]))


def mixture_experiment(root: str | Path, seeds=(0, 1, 2), cfg: ProtocolConfig | None = None, a: str = "ma",
                       b: str = "mb", data_seed: int = 0) -> MixtureResult:
    cfg = cfg or desk_protocol()
    t0 = time.time()
    train, test = _banks(_dataset(Path(root), mixture_dataset_config(a, b, seed=data_seed)))
    train = train.subset([m != MIXTURE_ID for m in train.material])
    test = test.subset([m is None or m == MIXTURE_ID for m in test.material])
    runs = []
    for seed in seeds:
        before, after, _ = run_mixture(train, test, seed, cfg)
        runs.append(MixtureRun(seed, before, after))
        log.info("seed %d mixture %s/%s: %.3f -> %.3f", seed, a, b, before.tdr["0.01"], after.tdr["0.01"])
    return MixtureResult(runs, time.time() - t0)
