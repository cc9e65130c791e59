"""Image files (8-bit PGM / PNG) and CSV dataset manifests."""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

MANIFEST_HEADER = ("path", "label", "material", "sensor", "subject", "split")
LABELS = ("live", "spoof")
SPLITS = ("train", "test")


class ImageFormatError(ValueError):
    pass


class ManifestError(ValueError):
    pass


# ---------------------------------------------------------------------------
# images


def _to_u8(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ImageFormatError(f"expected a 2-D grayscale image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr
    if not np.issubdtype(arr.dtype, np.floating):
        raise ImageFormatError(f"unsupported pixel type {arr.dtype}")
    if not np.all(np.isfinite(arr)):
        raise ImageFormatError("image contains NaN or Inf")
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def _pgm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PGM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError("malformed PGM header")
    return tokens, pos + 1


def decode_pgm(buf: bytes) -> np.ndarray:
    magic = buf[:2]
    if magic == b"P2":
        raise ImageFormatError("ASCII PGM (P2) is not supported; use binary P5")
    if magic != b"P5":
        raise ImageFormatError(f"not a PGM file (magic {magic!r})")
    tokens, pos = _pgm_tokens(buf, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ImageFormatError("non-numeric PGM header field") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"bad PGM size {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"unsupported PGM depth: maxval {maxval} (only 8-bit)")
    raster = buf[pos:]
    if len(raster) != width * height:
        raise ImageFormatError(f"PGM raster has {len(raster)} bytes, expected {width * height}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def encode_pgm(img) -> bytes:
    u8 = _to_u8(img)
    h, w = u8.shape
    return f"P5\n{w} {h}\n255\n".encode() + np.ascontiguousarray(u8).tobytes()


def read_image_u8(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from None
    if buf[:1] == b"P":
        return decode_pgm(buf)
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        with Image.open(_io.BytesIO(buf)) as im:
            if im.mode != "L":
                raise ImageFormatError(f"{path}: unsupported PNG depth/mode {im.mode!r} (only 8-bit grayscale)")
            return np.asarray(im, dtype=np.uint8).copy()
    raise ImageFormatError(f"{path}: unknown image format")


def read_image(path: str | Path) -> np.ndarray:
    """Grayscale image as float64 in [0, 1]."""
    return read_image_u8(path).astype(np.float64) / 255.0


def write_image(img, path: str | Path) -> None:
    """Write an 8-bit grayscale image; float input in [0, 1] is quantised.
    The format follows the suffix (.pgm or .png)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        path.write_bytes(encode_pgm(img))
    elif suffix == ".png":
        Image.fromarray(_to_u8(img), mode="L").save(path, format="PNG")
    else:
        raise ImageFormatError(f"unsupported image suffix {suffix!r}")


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: str
    material: str | None
    sensor: str
    subject: str
    split: str
    synthetic: bool = False

    def row(self) -> list[str]:
        return [self.path, self.label, self.material or "", self.sensor, self.subject, self.split]


@dataclass
class DatasetManifest:
    records: list[ManifestRecord] = field(default_factory=list)
    root: Path | None = None  # relative paths resolve against this

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve(self, rec: ManifestRecord) -> Path:
        p = Path(rec.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def select(self, **criteria) -> "DatasetManifest":
        """Records whose attributes equal the given values (a set/tuple/list
        value matches any member)."""
        def ok(r):
            for k, v in criteria.items():
                got = getattr(r, k)
                if isinstance(v, (set, frozenset, tuple, list)):
                    if got not in v:
                        return False
                elif got != v:
                    return False
            return True
        return DatasetManifest([r for r in self.records if ok(r)], self.root)

    def materials(self) -> list[str]:
        return sorted({r.material for r in self.records if r.material})

    def sensors(self) -> list[str]:
        return sorted({r.sensor for r in self.records})

    def subjects(self, split: str | None = None) -> set[str]:
        return {r.subject for r in self.records if split is None or r.split == split}

    def validate(self) -> None:
        problems = validate_records(self.records)
        if problems:
            raise ManifestError("; ".join(problems))


def validate_records(records: list[ManifestRecord]) -> list[str]:
    problems = []
    split_of: dict[str, tuple[str, int]] = {}
    for i, r in enumerate(records, start=2):  # row 1 is the header
        if r.label not in LABELS:
            problems.append(f"row {i}: label {r.label!r} not in {LABELS}")
        if r.split not in SPLITS:
            problems.append(f"row {i}: split {r.split!r} not in {SPLITS}")
        if r.label == "spoof" and not r.material:
            problems.append(f"row {i}: spoof record without material")
        if r.label == "live" and r.material:
            problems.append(f"row {i}: live record with material {r.material!r}")
        if r.synthetic and r.split == "test":
            problems.append(f"row {i}: synthetic record in the test split")
        if not r.path or not r.sensor or not r.subject:
            problems.append(f"row {i}: empty path, sensor or subject")
        if r.synthetic:
            continue
        if r.subject in split_of and split_of[r.subject][0] != r.split:
            first_split, first_row = split_of[r.subject]
            problems.append(f"subject {r.subject!r} in both {first_split} (row {first_row}) and {r.split} (row {i})")
        split_of.setdefault(r.subject, (r.split, i))
    return problems


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """CSV with the fixed header; a trailing ``synthetic`` column is added
    only when some record is synthetic."""
    with_flag = any(r.synthetic for r in manifest.records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(MANIFEST_HEADER) + (["synthetic"] if with_flag else []))
        for r in manifest.records:
            w.writerow(r.row() + ([str(int(r.synthetic))] if with_flag else []))


def load_manifest(path: str | Path, validate: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from None
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows:
        raise ManifestError(f"{path}: empty manifest file")
    header = tuple(rows[0])
    with_flag = header == MANIFEST_HEADER + ("synthetic",)
    if header != MANIFEST_HEADER and not with_flag:
        raise ManifestError(f"{path}: header {','.join(header)!r} != {','.join(MANIFEST_HEADER)!r}")
    width = len(header)
    records = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise ManifestError(f"{path}: row {i} has {len(row)} fields, expected {width}")
        synthetic = False
        if with_flag:
            if row[6] not in ("0", "1"):
                raise ManifestError(f"{path}: row {i} synthetic flag {row[6]!r}")
            synthetic = row[6] == "1"
        records.append(ManifestRecord(row[0], row[1], row[2] or None, row[3], row[4], row[5], synthetic))
    manifest = DatasetManifest(records, path.parent)
    if validate:
        problems = validate_records(records)
        if problems:
            raise ManifestError(f"{path}: " + "; ".join(problems))
    return manifest


def relabel(rec: ManifestRecord, **changes) -> ManifestRecord:
    return replace(rec, **changes)
