"""Classical minutiae extraction and minutia-aligned patch cropping.

Angles follow a compass convention in image coordinates (x = column to the
right, y = row downwards): 0 points up, pi/2 points right, and angles grow
clockwise on screen. Ridge orientations live in [0, pi), minutia directions
in [0, 2 pi).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage.morphology import thin as _skimage_thin

PATCH_SIZE = 96
PAD = 68  # covers the rotated footprint of a 96 px patch (48 * sqrt(2))

# 8-neighbourhood in cyclic order, as (dy, dx), starting north, clockwise
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


@dataclass
class Minutia:
    x: float
    y: float
    theta: float
    kind: str = "ending"
    quality: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ending", "bifurcation"):
            raise ValueError(f"unknown minutia kind {self.kind!r}")
        self.theta = float(self.theta) % (2 * np.pi)


@dataclass
class Patch:
    """96x96 grayscale crop in [0, 1] with its anchor and labels."""

    pixels: np.ndarray
    minutia: Minutia | None = None
    label: str = "live"
    material: str | None = None
    sensor: str | None = None
    source: str | None = None


@dataclass
class PatchSet:
    source_id: str
    patches: list[Patch] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.patches)

    def array(self) -> np.ndarray:
        if not self.patches:
            return np.zeros((0, PATCH_SIZE, PATCH_SIZE))
        return np.stack([p.pixels for p in self.patches])


def direction_vector(theta: float) -> np.ndarray:
    """Unit (dx, dy) for a compass angle."""
    return np.array([np.sin(theta), -np.cos(theta)])


def vector_angle(dx: float, dy: float) -> float:
    return float(np.arctan2(dx, -dy) % (2 * np.pi))


def angle_diff(a, b, period: float = 2 * np.pi):
    """Smallest absolute difference of two angles modulo ``period``."""
    d = np.mod(np.asarray(a) - np.asarray(b), period)
    return np.minimum(d, period - d)


# ---------------------------------------------------------------------------
# normalisation and orientation


def normalize_image(img) -> np.ndarray:
    """Zero-mean/unit-variance, then mapped symmetrically into [0, 1].

    The z-scored image is divided by its largest magnitude, so the output
    has mean exactly 0.5 and re-normalising it is a no-op.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty image")
    sd = arr.std()
    if sd < 1e-12:
        return np.full(arr.shape, 0.5)
    z = (arr - arr.mean()) / sd
    return 0.5 + 0.5 * z / np.abs(z).max()


@dataclass
class OrientationField:
    theta: np.ndarray  # (rows, cols) of blocks, ridge orientation in [0, pi)
    quality: np.ndarray  # coherence in [0, 1]; 0 on flat blocks
    block: int
    shape: tuple[int, int]

    def block_index(self, x: float, y: float) -> tuple[int, int]:
        r = int(np.clip(int(y) // self.block, 0, self.theta.shape[0] - 1))
        c = int(np.clip(int(x) // self.block, 0, self.theta.shape[1] - 1))
        return r, c

    def at(self, x: float, y: float) -> float:
        return float(self.theta[self.block_index(x, y)])

    def quality_at(self, x: float, y: float) -> float:
        return float(self.quality[self.block_index(x, y)])

    def pixel_quality(self) -> np.ndarray:
        q = np.kron(self.quality, np.ones((self.block, self.block)))
        return q[: self.shape[0], : self.shape[1]]


def _block_sum(a: np.ndarray, block: int) -> np.ndarray:
    h, w = a.shape
    rows, cols = -(-h // block), -(-w // block)
    padded = np.zeros((rows * block, cols * block))
    padded[:h, :w] = a
    return padded.reshape(rows, block, cols, block).sum(axis=(1, 3))


def orientation_field(img, block: int = 16) -> OrientationField:
    """Least-squares gradient orientation per block, smoothed over 3x3 blocks
    in doubled-angle space."""
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape
    if h < 2 * block or w < 2 * block:
        raise ValueError(f"image {h}x{w} smaller than two {block}px blocks per side")
    smooth = ndimage.gaussian_filter(arr, 1.0)
    gx = ndimage.sobel(smooth, axis=1)
    gy = ndimage.sobel(smooth, axis=0)
    gxx = _block_sum(gx * gx, block)
    gyy = _block_sum(gy * gy, block)
    gxy = _block_sum(gx * gy, block)
    # doubled-angle vector of the gradient, in the compass convention
    # (gradient direction vector (gx, gy) -> compass angle atan2(gx, -gy))
    vc = _box3(gyy - gxx)
    vs = _box3(-2.0 * gxy)
    energy = _box3(gxx + gyy)
    grad_double = np.arctan2(vs, vc)
    theta = np.mod(0.5 * grad_double + np.pi / 2, np.pi)
    with np.errstate(invalid="ignore", divide="ignore"):
        coherence = np.where(energy > 1e-9 * max(block * block, 1), np.hypot(vc, vs) / energy, 0.0)
    return OrientationField(theta=theta, quality=np.clip(coherence, 0.0, 1.0), block=block, shape=(h, w))


def _box3(a: np.ndarray) -> np.ndarray:
    return ndimage.uniform_filter(a, size=3, mode="nearest") * 9.0


# ---------------------------------------------------------------------------
# binarisation, thinning, minutiae


def binarize(img, orientation: OrientationField | None = None, window: int = 11,
             min_quality: float = 0.1) -> np.ndarray:
    """Dark ridges -> True where the pixel is below its local mean."""
    arr = ndimage.gaussian_filter(np.asarray(img, dtype=np.float64), 0.8)
    local = ndimage.uniform_filter(arr, size=window, mode="reflect")
    binary = arr < local - 1e-9
    if orientation is not None:
        binary &= orientation.pixel_quality() > min_quality
    return binary


def thin(binary) -> np.ndarray:
    """Topology-preserving thinning to a one-pixel-wide 8-connected skeleton."""
    return _skimage_thin(np.asarray(binary, dtype=bool))


def neighbours(skel: np.ndarray) -> np.ndarray:
    """(8, H, W) stack of neighbour values in ring order (zero outside)."""
    p = np.pad(skel.astype(np.uint8), 1)
    h, w = skel.shape
    return np.stack([p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] for dy, dx in _RING])


def crossing_number_map(skel: np.ndarray) -> np.ndarray:
    """Half the number of 0/1 transitions around each pixel's ring."""
    ring = neighbours(skel).astype(np.int16)
    transitions = np.abs(ring - np.roll(ring, -1, axis=0)).sum(axis=0)
    return (transitions // 2) * np.asarray(skel, dtype=bool)


def crossing_number(neighbourhood: np.ndarray) -> int:
    """Crossing number of the centre of a 3x3 binary neighbourhood."""
    nb = np.asarray(neighbourhood, dtype=np.int16)
    ring = [nb[1 + dy, 1 + dx] for dy, dx in _RING]
    return sum(abs(ring[i] - ring[(i + 1) % 8]) for i in range(8)) // 2


def classify(cn: int) -> str | None:
    return {1: "ending", 3: "bifurcation"}.get(int(cn))


def _skeleton_neighbours(skel: np.ndarray, y: int, x: int) -> list[tuple[int, int]]:
    h, w = skel.shape
    out = []
    for dy, dx in _RING:
        yy, xx = y + dy, x + dx
        if 0 <= yy < h and 0 <= xx < w and skel[yy, xx]:
            out.append((yy, xx))
    return out


def _ring_branches(skel: np.ndarray, y: int, x: int) -> list[tuple[int, int]]:
    """One representative pixel per run of set pixels around the ring, the
    same runs the crossing number counts. A 4-connected member is preferred."""
    h, w = skel.shape
    on = [0 <= y + dy < h and 0 <= x + dx < w and bool(skel[y + dy, x + dx]) for dy, dx in _RING]
    if all(on):
        return []
    start = on.index(False)
    runs: list[list[int]] = []
    for k in range(1, 9):
        i = (start + k) % 8
        if on[i]:
            if not on[(i - 1) % 8]:
                runs.append([])
            runs[-1].append(i)
    reps = []
    for run in runs:
        straight = [i for i in run if i % 2 == 0]
        i = (straight or run)[0]
        reps.append((y + _RING[i][0], x + _RING[i][1]))
    return reps


def _trace(skel: np.ndarray, cn: np.ndarray, start: tuple[int, int], first: tuple[int, int],
           limit: int) -> tuple[list[tuple[int, int]], str]:
    """Walk along a ridge from ``start`` through ``first``.

    Returns the visited path (excluding ``start``) and why it stopped:
    ``"ending"``, ``"junction"`` or ``"limit"``.
    """
    path = [first]
    # the start's other ring pixels belong to other branches
    visited = {start, first, *((start[0] + dy, start[1] + dx) for dy, dx in _RING)}
    cur = first
    while len(path) < limit:
        if cn[cur] == 1:
            return path, "ending"
        if cn[cur] >= 3:
            return path, "junction"
        nxt = [p for p in _skeleton_neighbours(skel, *cur) if p not in visited]
        if not nxt:
            return path, "ending"
        # prefer 4-connected steps so staircase corners are not skipped twice
        nxt.sort(key=lambda p: (abs(p[0] - cur[0]) + abs(p[1] - cur[1]), p))
        cur = nxt[0]
        visited.update(nxt)  # siblings of a staircase belong to the same ridge
        path.append(cur)
    return path, "limit"


def _single_branch(dirs: list[np.ndarray], orient: OrientationField | None, x: float, y: float) -> int:
    """Index of the unforked branch of a bifurcation.

    Both forks leave along one sense of the ridge axis and the single branch
    along the other, so the branch whose axial projection has the odd sign
    out is the single one. Without a clear sign split the pair of branches
    with the smallest opening angle is taken as the forks.
    """
    if orient is not None:
        axis = direction_vector(orient.at(x, y))
        proj = np.array([float(d @ axis) for d in dirs])
        pos = proj > 0
        if pos.sum() in (1, 2):
            odd = np.flatnonzero(pos if pos.sum() == 1 else ~pos)[0]
            if abs(proj[odd]) > 0.3:
                return int(odd)
    pairs = [(0, 1), (0, 2), (1, 2)]
    closest = max(pairs, key=lambda ij: float(dirs[ij[0]] @ dirs[ij[1]]))
    return ({0, 1, 2} - set(closest)).pop()


def _resolve_direction(orient: OrientationField | None, x: float, y: float, vec: np.ndarray) -> float:
    """Snap the traced direction onto the local ridge orientation."""
    rough = vector_angle(vec[0], vec[1])
    if orient is None:
        return rough
    base = orient.at(x, y)
    cands = np.array([base, base + np.pi])
    return float(cands[np.argmin(angle_diff(cands, rough))] % (2 * np.pi))


def extract_minutiae(skeleton, orientation: OrientationField | None = None, min_border: int = 8,
                     min_ridge_len: int = 6, min_separation: float = 0.0,
                     trace_len: int = 10) -> list[Minutia]:
    """Crossing-number minutiae with border, short-ridge and proximity filters.

    Endings point out of the ridge they terminate; bifurcations point along
    their single (unforked) branch, away from the fork.
    """
    skel = np.asarray(skeleton, dtype=bool)
    cn = crossing_number_map(skel)
    h, w = skel.shape
    found: list[Minutia] = []
    ys, xs = np.nonzero((cn == 1) | (cn == 3))
    for y, x in zip(ys.tolist(), xs.tolist()):
        if x < min_border or y < min_border or x >= w - min_border or y >= h - min_border:
            continue
        kind = classify(cn[y, x])
        traces = [_trace(skel, cn, (y, x), b, max(trace_len, min_ridge_len))
                  for b in _ring_branches(skel, y, x)]
        if kind == "ending":
            if not traces:
                continue
            path, why = traces[0]
            if why != "limit" and len(path) < min_ridge_len:
                continue
            tip = np.array(path[min(len(path), trace_len) - 1], dtype=float)
            vec = np.array([x - tip[1], y - tip[0]])
        else:
            if len(traces) != 3:
                continue
            if any(why == "ending" and len(path) < min_ridge_len for path, why in traces):
                continue
            dirs = []
            for path, _ in traces:
                tip = np.array(path[min(len(path), trace_len) - 1], dtype=float)
                v = np.array([tip[1] - x, tip[0] - y])
                dirs.append(v / (np.linalg.norm(v) + 1e-12))
            vec = dirs[_single_branch(dirs, orientation, x, y)]
        if np.linalg.norm(vec) < 1e-9:
            continue
        theta = _resolve_direction(orientation, x, y, vec)
        quality = orientation.quality_at(x, y) if orientation is not None else 1.0
        found.append(Minutia(float(x), float(y), theta, kind, quality))
    if min_separation > 0:
        found = _drop_close_pairs(found, min_separation)
    return found


def _drop_close_pairs(mins: list[Minutia], radius: float) -> list[Minutia]:
    """Remove every minutia that has another within ``radius`` (broken ridges,
    bridges and junction clusters produce such pairs)."""
    if len(mins) < 2:
        return mins
    pts = np.array([[m.x, m.y] for m in mins])
    d = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
    np.fill_diagonal(d, np.inf)
    keep = d.min(axis=1) >= radius
    return [m for m, k in zip(mins, keep) if k]


@dataclass
class MinutiaeParams:
    block: int = 16
    min_border: int = 8
    min_ridge_len: int = 6
    min_separation: float = 6.0
    min_quality: float = 0.1


def detect_minutiae(img, params: MinutiaeParams | None = None) -> list[Minutia]:
    """normalize -> orientation -> binarize -> thin -> crossing number."""
    params = params or MinutiaeParams()
    norm = normalize_image(img)
    orient = orientation_field(norm, params.block)
    skel = thin(binarize(norm, orient, min_quality=params.min_quality))
    return extract_minutiae(skel, orient, params.min_border, params.min_ridge_len, params.min_separation)


# ---------------------------------------------------------------------------
# patches


def extract_patch(img, minutia: Minutia, size: int = PATCH_SIZE, pad: int = PAD) -> np.ndarray:
    """Rotate the image by -theta about the minutia and crop ``size`` x ``size``.

    The minutia direction ends up pointing up. The image is reflect-padded by
    ``pad`` pixels first so minutiae near the border stay usable.
    """
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape
    half = size / 2.0
    reach = half * np.sqrt(2.0)
    if not (-pad + reach <= minutia.x <= w - 1 + pad - reach and -pad + reach <= minutia.y <= h - 1 + pad - reach):
        raise ValueError(f"patch footprint at ({minutia.x}, {minutia.y}) leaves the padded image")
    padded = np.pad(arr, pad, mode="reflect")
    offs = np.arange(size) - size // 2
    v, u = np.meshgrid(offs, offs, indexing="ij")
    c, s = np.cos(minutia.theta), np.sin(minutia.theta)
    if s == 0.0 and c == 1.0:
        src_x, src_y = u + minutia.x, v + minutia.y
    else:
        src_x = minutia.x + c * u - s * v
        src_y = minutia.y + s * u + c * v
    out = ndimage.map_coordinates(padded, [src_y + pad, src_x + pad], order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def rotate_image(img, angle: float, center: tuple[float, float] | None = None, order: int = 1) -> np.ndarray:
    """Rotate clockwise on screen by ``angle`` (compass sense) about ``center``."""
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape
    cx, cy = center if center is not None else ((w - 1) / 2.0, (h - 1) / 2.0)
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    c, s = np.cos(angle), np.sin(angle)
    dx, dy = xx - cx, yy - cy
    src_x = cx + c * dx + s * dy
    src_y = cy - s * dx + c * dy
    return ndimage.map_coordinates(arr, [src_y, src_x], order=order, mode="reflect")


def rotate_point(x: float, y: float, angle: float, center: tuple[float, float]) -> tuple[float, float]:
    cx, cy = center
    c, s = np.cos(angle), np.sin(angle)
    dx, dy = x - cx, y - cy
    return cx + c * dx - s * dy, cy + s * dx + c * dy


def grid_minutiae(shape: tuple[int, int], count: int = 8, margin: int = 8) -> list[Minutia]:
    """Evenly spread fallback anchors (theta 0) for prints without minutiae."""
    h, w = shape
    cols = int(np.ceil(np.sqrt(count)))
    rows = int(np.ceil(count / cols))
    xs = np.linspace(margin, w - 1 - margin, cols + 2)[1:-1]
    ys = np.linspace(margin, h - 1 - margin, rows + 2)[1:-1]
    pts = [(x, y) for y in ys for x in xs][:count]
    return [Minutia(round(x), round(y), 0.0, "ending", 0.0) for x, y in pts]


def extract_patches(img, minutiae: list[Minutia], size: int = PATCH_SIZE,
                    max_patches: int | None = None, source: str | None = None, **labels) -> PatchSet:
    chosen = minutiae
    if max_patches is not None and len(minutiae) > max_patches:
        # highest quality first, ties in detection order
        order = sorted(range(len(minutiae)), key=lambda i: (-minutiae[i].quality, i))[:max_patches]
        chosen = [minutiae[i] for i in sorted(order)]
    ps = PatchSet(source_id=source or "")
    for m in chosen:
        ps.patches.append(Patch(extract_patch(img, m, size), m, source=source, **labels))
    return ps


# ---------------------------------------------------------------------------
# sidecar files


def write_minutiae(path: str | Path, minutiae: list[Minutia]) -> None:
    lines = [f"{m.x:.2f} {m.y:.2f} {m.theta:.6f} {m.kind} {m.quality:.4f}" for m in minutiae]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_minutiae(path: str | Path) -> list[Minutia]:
    out = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{path}:{ln}: expected 'x y theta kind quality'")
        out.append(Minutia(float(parts[0]), float(parts[1]), float(parts[2]), parts[3], float(parts[4])))
    return out
