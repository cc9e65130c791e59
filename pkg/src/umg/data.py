"""Array-backed patch collections built from manifests."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fingerprint import PATCH_SIZE, Minutia, detect_minutiae, extract_patches, grid_minutiae
from .io import DatasetManifest, read_image

FALLBACK_PATCHES = 8


@dataclass
class PatchBank:
    """Patches with per-patch labels; ``image`` indexes ``image_ids``."""

    pixels: np.ndarray  # (N, 96, 96) float32 in [0, 1]
    label: np.ndarray  # (N,) int, 1 = spoof
    material: list[str | None]
    sensor: list[str]
    image: np.ndarray  # (N,) int
    image_ids: list[str]
    synthetic: np.ndarray = field(default=None)  # (N,) bool
    provenance: list[dict] = field(default_factory=list)  # one per synthetic patch, else empty

    def __post_init__(self):
        n = len(self.pixels)
        if self.synthetic is None:
            self.synthetic = np.zeros(n, dtype=bool)
        if not (len(self.label) == len(self.material) == len(self.sensor) == len(self.image) == n):
            raise ValueError("patch bank fields have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.pixels)

    def subset(self, mask) -> "PatchBank":
        idx = np.flatnonzero(np.asarray(mask)) if np.asarray(mask).dtype == bool else np.asarray(mask, dtype=int)
        prov = [self.provenance[i] for i in idx] if self.provenance else []
        return PatchBank(self.pixels[idx], self.label[idx], [self.material[i] for i in idx],
                         [self.sensor[i] for i in idx], self.image[idx], self.image_ids,
                         self.synthetic[idx], prov)

    def by_material(self) -> dict[str, np.ndarray]:
        """Pixels grouped by material id (lives under ``"live"``)."""
        out: dict[str, list[int]] = {}
        for i, m in enumerate(self.material):
            out.setdefault(m or "live", []).append(i)
        return {k: self.pixels[v] for k, v in sorted(out.items())}

    @staticmethod
    def empty() -> "PatchBank":
        return PatchBank(np.zeros((0, PATCH_SIZE, PATCH_SIZE), np.float32), np.zeros(0, int), [], [],
                         np.zeros(0, int), [])


def concat_banks(banks: list[PatchBank]) -> PatchBank:
    banks = [b for b in banks if len(b)]
    if not banks:
        return PatchBank.empty()
    ids: list[str] = []
    images = []
    for b in banks:
        images.append(b.image + len(ids))
        ids.extend(b.image_ids)
    prov_needed = any(b.provenance for b in banks)
    prov = []
    if prov_needed:
        for b in banks:
            prov.extend(b.provenance if b.provenance else [{}] * len(b))
    return PatchBank(np.concatenate([b.pixels for b in banks]), np.concatenate([b.label for b in banks]),
                     sum((b.material for b in banks), []), sum((b.sensor for b in banks), []),
                     np.concatenate(images), ids, np.concatenate([b.synthetic for b in banks]), prov)


def image_anchors(img: np.ndarray, fallback: int = FALLBACK_PATCHES) -> list[Minutia]:
    """Detected minutiae, or evenly spread grid anchors when none are found."""
    found = detect_minutiae(img)
    return found if found else grid_minutiae(img.shape, fallback)


_CACHE: dict[tuple[str, int], np.ndarray] = {}


def image_patches(path: str | Path, max_patches: int) -> np.ndarray:
    """Minutia-aligned patches of one image file (memoised per process)."""
    key = (str(Path(path).resolve()), int(max_patches))
    if key not in _CACHE:
        img = read_image(path)
        ps = extract_patches(img, image_anchors(img), max_patches=max_patches, source=str(path))
        _CACHE[key] = ps.array().astype(np.float32)
    return _CACHE[key]


def clear_cache() -> None:
    _CACHE.clear()


def load_patches(manifest: DatasetManifest, max_patches: int = 8) -> PatchBank:
    pixels, label, material, sensor, image, ids, synthetic = [], [], [], [], [], [], []
    for rec in manifest.records:
        if rec.synthetic:  # synthetic files are stored as single aligned patches
            arr = read_image(manifest.resolve(rec)).astype(np.float32)
            if arr.shape != (PATCH_SIZE, PATCH_SIZE):
                raise ValueError(f"synthetic record {rec.path} is {arr.shape}, expected a {PATCH_SIZE}px patch")
            arr = arr[None]
        else:
            arr = image_patches(manifest.resolve(rec), max_patches)
        k = len(ids)
        ids.append(rec.path)
        pixels.append(arr)
        n = len(arr)
        label.extend([int(rec.label == "spoof")] * n)
        material.extend([rec.material] * n)
        sensor.extend([rec.sensor] * n)
        image.extend([k] * n)
        synthetic.extend([rec.synthetic] * n)
    if not pixels:
        return PatchBank.empty()
    return PatchBank(np.concatenate(pixels), np.array(label, dtype=int), material, sensor,
                     np.array(image, dtype=int), ids, np.array(synthetic, dtype=bool))
