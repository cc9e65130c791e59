"""Experiment protocols: leave-one-material-out, cross-sensor transfer and
the two-material mixture check, each comparing a baseline detector with a
UMG-augmented one."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import PatchBank
from .detection import DetectorConfig, ScoreRecord, TrainedDetector, score_bank, train_detector
from .metrics import ace, eer, tdr_at_fdr, weighted_mean_std
from .pipeline import (
    HygieneError,
    SynthesisPlan,
    UmgConfig,
    audit_leave_one_out,
    augment_bank,
    cross_sensor_synthesize,
    synthesize_live_set,
    synthesize_spoof_set,
    train_umg,
)
from .seeding import derive_seed

log = logging.getLogger(__name__)

FDR_TARGETS = (0.01, 0.05)


@dataclass
class ProtocolConfig:
    umg: UmgConfig = field(default_factory=lambda: UmgConfig(max_steps=100))
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    alpha: float = 0.5
    synth_ratio: float = 1.0  # synthetic spoof patches per real training spoof patch
    live_synth_ratio: float = 0.0  # synthetic live patches per real training live patch
    fine_tune_epochs: int = 3  # mixture protocol
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.synth_ratio <= 0 or self.live_synth_ratio < 0:
            raise ValueError("synth_ratio must be > 0 and live_synth_ratio >= 0")
        if self.fine_tune_epochs < 1 or self.workers < 1:
            raise ValueError("fine_tune_epochs and workers must be >= 1")


@dataclass
class EvalReport:
    protocol: str
    arm: str  # "baseline" or "umg"
    seed: int
    held_out: str | None
    train_sensor: str | None
    test_sensor: str | None
    tdr: dict[str, float]  # keyed by FDR target, e.g. "0.01"
    thresholds: dict[str, float]
    ace: float
    eer: float
    n_live: int
    n_spoof: int
    per_material: dict[str, dict[str, float]]  # material -> {"tdr@0.01": ..., "n": ...}
    scores: list[ScoreRecord] = field(default_factory=list, repr=False)
    seconds: float = 0.0

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("scores")
        return out


def evaluate(records: list[ScoreRecord], protocol: str, arm: str, seed: int, held_out: str | None = None,
             train_sensor: str | None = None, test_sensor: str | None = None) -> EvalReport:
    live = [r.score for r in records if r.truth == "live"]
    spoof = [r.score for r in records if r.truth == "spoof"]
    tdr, thr = {}, {}
    for f in FDR_TARGETS:
        tdr[f"{f:g}"], thr[f"{f:g}"] = tdr_at_fdr(live, spoof, f)
    per = {}
    for m in sorted({r.material for r in records if r.truth == "spoof"}):
        ms = [r.score for r in records if r.truth == "spoof" and r.material == m]
        per[m] = {f"tdr@{f:g}": tdr_at_fdr(live, ms, f)[0] for f in FDR_TARGETS}
        per[m]["n"] = len(ms)
    return EvalReport(protocol, arm, seed, held_out, train_sensor, test_sensor, tdr, thr, ace(live, spoof),
                      eer(live, spoof), len(live), len(spoof), per, list(records))


def _spoof_groups(bank: PatchBank) -> dict[str, np.ndarray]:
    return bank.subset(bank.label == 1).by_material()


def _n(ratio: float, count: int) -> int:
    return max(1, int(round(ratio * count)))


# ---------------------------------------------------------------------------
# leave one material out


def _loo_fold(args) -> tuple[EvalReport, EvalReport]:
    train, test, held_out, seed, cfg, live_synth = args
    t0 = time.time()
    fold_seed = derive_seed(seed, "fold", held_out)
    known = train.subset([m != held_out for m in train.material])
    audit_leave_one_out(known, held_out)
    test_fold = test.subset([m is None or m == held_out for m in test.material])
    if not np.any(test_fold.label == 1):
        raise ValueError(f"no test spoofs of held-out material {held_out}")

    base = train_detector(known, derive_seed(fold_seed, "baseline"), cfg.detector)
    base_rep = evaluate(score_bank(base.detector, test_fold), "leave-one-out", "baseline", seed, held_out)
    base_rep.seconds = time.time() - t0

    t1 = time.time()
    groups = _spoof_groups(known)
    if len(groups) < 2:
        raise ValueError("leave-one-out needs at least 2 known materials")
    model = train_umg(groups, cfg.umg, derive_seed(fold_seed, "umg"), role="spoof")
    n_spoof = int((known.label == 1).sum())
    synth = synthesize_spoof_set(model, known, SynthesisPlan(_n(cfg.synth_ratio, n_spoof), cfg.alpha,
                                                             derive_seed(fold_seed, "synth")))
    aug = augment_bank(known, [synth] + ([live_synth] if live_synth is not None else []))
    audit_leave_one_out(aug, held_out)
    umg = train_detector(aug, derive_seed(fold_seed, "augmented"), cfg.detector)
    umg_rep = evaluate(score_bank(umg.detector, test_fold), "leave-one-out", "umg", seed, held_out)
    umg_rep.seconds = time.time() - t1
    log.info("fold %s seed %d: baseline TDR@1%% %.3f, UMG %.3f", held_out, seed, base_rep.tdr["0.01"],
             umg_rep.tdr["0.01"])
    return base_rep, umg_rep


def shared_live_synthesis(train: PatchBank, seed: int, cfg: ProtocolConfig) -> PatchBank | None:
    """Live syntheses from a live-only UMG; lives are known in every fold,
    so one set serves them all."""
    if cfg.live_synth_ratio <= 0:
        return None
    lives = train.subset(train.label == 0)
    model = train_umg({"live": lives.pixels}, cfg.umg, derive_seed(seed, "live-umg"), role="live")
    return synthesize_live_set(model, lives, SynthesisPlan(_n(cfg.live_synth_ratio, len(lives)), cfg.alpha,
                                                           derive_seed(seed, "live-synth")))


def run_leave_one_out(train: PatchBank, test: PatchBank, seed: int = 0, cfg: ProtocolConfig | None = None,
                      materials: list[str] | None = None) -> list[tuple[EvalReport, EvalReport]]:
    """One (baseline, UMG) report pair per held-out material, in material order."""
    cfg = cfg or ProtocolConfig()
    all_materials = sorted({m for m in train.material if m})
    if len(all_materials) < 2:
        raise ValueError("leave-one-out needs at least 2 materials")
    materials = materials or all_materials
    live_synth = shared_live_synthesis(train, seed, cfg)
    jobs = [(train, test, m, seed, cfg, live_synth) for m in materials]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_loo_fold, jobs))
    return [_loo_fold(j) for j in jobs]


def aggregate(reports: list[EvalReport], key: str = "0.01") -> tuple[float, float]:
    """Image-count weighted mean and s.d. of TDR across held-out folds."""
    return weighted_mean_std([r.tdr[key] for r in reports], [r.n_spoof for r in reports])


# ---------------------------------------------------------------------------
# cross sensor


def run_cross_sensor(source_train: PatchBank, target_lives: PatchBank, target_test: PatchBank, seed: int = 0,
                     cfg: ProtocolConfig | None = None, counts: tuple[int, int] | None = None,
                     ) -> tuple[EvalReport, EvalReport]:
    """Baseline: detector trained on the source sensor. UMG arm: detector
    trained only on source patches restyled by a live UMG fitted to the
    target lives."""
    cfg = cfg or ProtocolConfig()
    src, tgt = sorted(set(source_train.sensor)), sorted(set(target_test.sensor))
    if len(src) != 1 or len(tgt) != 1:
        raise ValueError("cross-sensor runs take one source and one target sensor")
    if src == tgt:
        raise ValueError(f"source and target sensor are both {src[0]}")
    t0 = time.time()
    base = train_detector(source_train, derive_seed(seed, "xs-baseline"), cfg.detector)
    base_rep = evaluate(score_bank(base.detector, target_test), "cross-sensor", "baseline", seed, None, src[0],
                        tgt[0])
    base_rep.seconds = time.time() - t0
    t1 = time.time()
    if counts is None:
        counts = (int((source_train.label == 0).sum()), int((source_train.label == 1).sum()))
    _, synth = cross_sensor_synthesize(target_lives, source_train, counts, seed, cfg.umg)
    if not np.all(synth.synthetic):
        raise HygieneError("cross-sensor training set contains real patches")
    umg = train_detector(synth, derive_seed(seed, "xs-umg"), cfg.detector)
    umg_rep = evaluate(score_bank(umg.detector, target_test), "cross-sensor", "umg", seed, None, src[0], tgt[0])
    umg_rep.seconds = time.time() - t1
    return base_rep, umg_rep


# ---------------------------------------------------------------------------
# mixture of two known materials


def run_mixture(train: PatchBank, test: PatchBank, seed: int = 0, cfg: ProtocolConfig | None = None,
                ) -> tuple[EvalReport, EvalReport, TrainedDetector]:
    """Train on lives plus two materials, then fine-tune on UMG syntheses
    that interpolate the two; both are scored on ``test`` (lives plus the
    mixture material)."""
    cfg = cfg or ProtocolConfig()
    groups = _spoof_groups(train)
    if len(groups) != 2:
        raise ValueError(f"mixture protocol needs exactly 2 training materials, got {sorted(groups)}")
    pre = train_detector(train, derive_seed(seed, "mix-pre"), cfg.detector)
    pre_rep = evaluate(score_bank(pre.detector, test), "mixture", "baseline", seed)
    model = train_umg(groups, cfg.umg, derive_seed(seed, "mix-umg"), role="spoof")
    n_spoof = int((train.label == 1).sum())
    synth = synthesize_spoof_set(model, train, SynthesisPlan(_n(cfg.synth_ratio, n_spoof), cfg.alpha,
                                                             derive_seed(seed, "mix-synth")))
    tune_cfg = DetectorConfig(epochs=cfg.fine_tune_epochs, batch_size=cfg.detector.batch_size, lr=cfg.detector.lr,
                              balance=cfg.detector.balance)
    post = train_detector(augment_bank(train, [synth]), derive_seed(seed, "mix-tune"), tune_cfg, init=pre.detector)
    post_rep = evaluate(score_bank(post.detector, test), "mixture", "umg", seed)
    return pre_rep, post_rep, post
