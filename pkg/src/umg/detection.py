"""Spoof-detector training and patch-averaged image scoring."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import NumericError, backward, cross_entropy, no_grad, optimizer_step, rmsprop
from .data import PatchBank, image_anchors
from .fingerprint import extract_patches
from .io import read_image
from .metrics import image_score
from .networks import Detector, build_detector
from .seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass
class DetectorConfig:
    epochs: int = 6
    batch_size: int = 64
    lr: float = 1e-3
    balance: bool = True  # weight classes inversely to their frequency

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr > 0 required")


@dataclass
class TrainedDetector:
    detector: Detector
    log: list[dict] = field(default_factory=list)


def train_detector(bank: PatchBank, seed: int = 0, cfg: DetectorConfig | None = None,
                   init: Detector | None = None) -> TrainedDetector:
    """Cross-entropy training with RMSProp, from scratch or, when ``init`` is
    given, fine-tuning a copy of that detector."""
    cfg = cfg or DetectorConfig()
    labels = np.asarray(bank.label, dtype=int)
    if len(np.unique(labels)) < 2:
        raise ValueError("detector training needs both live and spoof patches")
    det = build_detector(derive_seed(seed, "detector-init"))
    if init is not None:
        det = Detector(seed=init.seed, stem=init.stem, blocks=init.blocks)
        det.load_state_dict(init.state_dict())
    opt = rmsprop(det.params(), lr=cfg.lr)
    counts = np.bincount(labels, minlength=2).astype(np.float64)
    class_w = (len(labels) / (2.0 * counts)) if cfg.balance else np.ones(2)
    rng = np.random.default_rng(derive_seed(seed, "detector-batches"))
    out = TrainedDetector(det)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(labels))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                logits = det.logits(bank.pixels[idx])
                loss = cross_entropy(logits, labels[idx], class_w[labels[idx]])
            except NumericError as exc:
                raise RuntimeError(f"non-finite value at detector step {step}: {exc}") from None
            grads = backward(loss)
            optimizer_step(opt, det.params(), [grads.get(p) for p in det.params()])
            acc = float(np.mean(np.argmax(logits.data, axis=1) == labels[idx]))
            out.log.append({"epoch": epoch, "step": step, "loss": float(loss.data), "accuracy": acc})
            step += 1
        recent = out.log[-max(1, math.ceil(len(order) / cfg.batch_size)):]
        log.info("detector epoch %d loss %.4f acc %.3f", epoch + 1, np.mean([r["loss"] for r in recent]),
                 np.mean([r["accuracy"] for r in recent]))
    return out


def patch_spoofness(det: Detector, pixels: np.ndarray, chunk: int = 128) -> np.ndarray:
    out = []
    with no_grad():
        for i in range(0, len(pixels), chunk):
            out.append(det.spoofness(pixels[i:i + chunk]).astype(np.float64))
    return np.concatenate(out) if out else np.zeros(0)


@dataclass(frozen=True)
class ScoreRecord:
    image_id: str
    truth: str
    material: str | None
    sensor: str | None
    score: float
    patch_count: int


def score_bank(det: Detector, bank: PatchBank) -> list[ScoreRecord]:
    """One record per image: the mean spoofness of its patches."""
    s = patch_spoofness(det, bank.pixels)
    records = []
    for img in np.unique(bank.image):
        idx = np.flatnonzero(bank.image == img)
        i0 = idx[0]
        records.append(ScoreRecord(bank.image_ids[img], "spoof" if bank.label[i0] else "live", bank.material[i0],
                                   bank.sensor[i0], image_score(s[idx]), len(idx)))
    return records


def score_image(det: Detector, image, max_patches: int = 8, image_id: str = "", truth: str = "unknown",
                material: str | None = None, sensor: str | None = None) -> ScoreRecord:
    """Score an image array or file: minutia patches (or the grid fallback)."""
    if isinstance(image, (str, Path)):
        image_id = image_id or str(image)
        image = read_image(image)
    image = np.asarray(image, dtype=np.float64)
    ps = extract_patches(image, image_anchors(image), max_patches=max_patches)
    scores = patch_spoofness(det, ps.array().astype(np.float32))
    return ScoreRecord(image_id, truth, material, sensor, image_score(scores), len(scores))
