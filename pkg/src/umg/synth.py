"""Procedural fingerprint-like prints, material styles and sensor profiles.

A print is ``cos`` of a phase field: a plane wave plus a smooth warp (local
frequency and orientation jitter), optional Gaussian bumps whose critical
points act as singular points, and one +-1 phase vortex per planted minutia.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .fingerprint import Minutia, OrientationField, angle_diff
from .seeding import derive_seed
from .io import DatasetManifest, ManifestRecord, save_manifest, write_image

RIDGE_PERIOD = 9.0


@dataclass(frozen=True)
class SensorProfile:
    id: str
    resolution_scale: float = 1.0  # ridge period multiplier
    gamma: float = 1.0
    noise_sigma: float = 0.02
    dot_density: float = 0.002  # fixed-pattern dots per pixel
    dot_seed: int = 0
    blur: float = 0.5

    def __post_init__(self):
        if not 0.5 <= self.resolution_scale <= 2.0:
            raise ValueError("resolution_scale outside [0.5, 2]")
        if not 0.2 <= self.gamma <= 5.0:
            raise ValueError("gamma outside [0.2, 5]")
        if not 0 <= self.noise_sigma <= 0.3 or not 0 <= self.dot_density <= 0.05:
            raise ValueError("noise parameters out of range")


@dataclass(frozen=True)
class MaterialProfile:
    id: str
    blur: float = 0.0  # gaussian sigma, px
    speckle: float = 0.0  # additive noise amplitude
    blob_density: float = 0.0  # dropout blobs per 10k px
    contrast_gain: float = 1.0
    contrast_offset: float = 0.0
    thickening: float = 0.0  # 0..1 blend towards a grey min-filter (fatter dark ridges)

    def __post_init__(self):
        if not 0 <= self.blur <= 6 or not 0 <= self.speckle <= 0.5 or not 0 <= self.blob_density <= 10:
            raise ValueError(f"material {self.id}: parameter out of range")
        if not 0.1 <= self.contrast_gain <= 2.0 or not -0.5 <= self.contrast_offset <= 0.5:
            raise ValueError(f"material {self.id}: contrast out of range")
        if not 0 <= self.thickening <= 1:
            raise ValueError(f"material {self.id}: thickening out of range")

    def vector(self) -> np.ndarray:
        return np.array([self.blur, self.speckle, self.blob_density, self.contrast_gain,
                         self.contrast_offset, self.thickening])

    def is_neutral(self) -> bool:
        return bool(np.allclose(self.vector(), NEUTRAL.vector()))


NEUTRAL = MaterialProfile("neutral")

DEFAULT_SENSORS = {
    "A": SensorProfile("A", resolution_scale=1.0, gamma=1.0, noise_sigma=0.02, dot_density=0.002, dot_seed=11, blur=0.5),
    "B": SensorProfile("B", resolution_scale=1.15, gamma=0.55, noise_sigma=0.05, dot_density=0.006, dot_seed=23, blur=0.9),
}

DEFAULT_MATERIALS = {
    "m0": MaterialProfile("m0", blur=1.6, speckle=0.02, contrast_gain=0.9, thickening=0.1),
    "m1": MaterialProfile("m1", blur=0.3, speckle=0.14, contrast_gain=1.0, blob_density=0.5),
    "m2": MaterialProfile("m2", blur=0.5, contrast_gain=0.45, contrast_offset=0.15, thickening=0.1),
    "m3": MaterialProfile("m3", blur=0.6, speckle=0.03, blob_density=3.0, thickening=0.6),
}


def profiles_separated(a: MaterialProfile, b: MaterialProfile, rel: float = 0.2, count: int = 2) -> bool:
    """At least ``count`` parameters differ by ``rel`` of their magnitude
    (absolute 0.05 floor for parameters near zero)."""
    va, vb = a.vector(), b.vector()
    scale = np.maximum(np.maximum(np.abs(va), np.abs(vb)), 0.05)
    return int((np.abs(va - vb) / scale >= rel).sum()) >= count


def material_catalog(n: int, seed: int = 0) -> list[MaterialProfile]:
    """The default materials, extended with random profiles that are
    separated from every earlier one when more than four are asked for."""
    if n < 2:
        raise ValueError("need at least 2 materials")
    out = list(DEFAULT_MATERIALS.values())[:n]
    rng = np.random.default_rng([seed, 8])
    while len(out) < n:
        cand = MaterialProfile(f"m{len(out)}", blur=float(rng.uniform(0, 2)), speckle=float(rng.uniform(0, 0.15)),
                               blob_density=float(rng.choice([0.0, rng.uniform(0.5, 3)])),
                               contrast_gain=float(rng.uniform(0.4, 1.0)), contrast_offset=float(rng.uniform(0, 0.2)),
                               thickening=float(rng.uniform(0, 0.6)))
        if all(profiles_separated(cand, m) for m in out):
            out.append(cand)
    return out


# ---------------------------------------------------------------------------
# live prints


@dataclass
class PrintSample:
    image: np.ndarray
    minutiae: list[Minutia]  # planted ground truth
    orientation: np.ndarray  # per-pixel ridge orientation in [0, pi)
    singular_points: list[tuple[float, float]] = field(default_factory=list)

    def block_orientation(self, block: int = 16) -> np.ndarray:
        """Doubled-angle block average of the planted orientation."""
        h, w = self.orientation.shape
        rows, cols = h // block, w // block
        o = self.orientation[: rows * block, : cols * block]
        c = np.cos(2 * o).reshape(rows, block, cols, block).mean(axis=(1, 3))
        s = np.sin(2 * o).reshape(rows, block, cols, block).mean(axis=(1, 3))
        return np.mod(0.5 * np.arctan2(s, c), np.pi)


@dataclass
class FingerPattern:
    """Subject-level ridge geometry; impressions jitter it slightly."""

    size: int
    period: float
    direction: float
    warp: list[tuple[float, float, float, float]]  # (amplitude, kx, ky, phase)
    bumps: list[tuple[float, float, float, float]]  # (x, y, amplitude, width)
    vortices: list[tuple[float, float, int]]  # (x, y, sign)
    offset: float


def make_pattern(seed: int, size: int = 256, period: float = RIDGE_PERIOD) -> FingerPattern:
    if size % 16:
        raise ValueError("print size must be divisible by 16")
    rng = np.random.default_rng([seed, 1])
    period = period * rng.uniform(0.9, 1.1)
    k = 2 * np.pi / period
    direction = rng.uniform(0, np.pi)
    warp = []
    for _ in range(3):
        wl = rng.uniform(0.6, 1.4) * size
        ang = rng.uniform(0, 2 * np.pi)
        # keep the warp gradient well below the carrier gradient
        amp = rng.uniform(0.08, 0.16) * k * wl / (2 * np.pi)
        warp.append((amp, 2 * np.pi / wl * np.cos(ang), 2 * np.pi / wl * np.sin(ang), rng.uniform(0, 2 * np.pi)))
    n_sing = int(rng.integers(0, 3))
    bumps = []
    for _ in range(n_sing):
        width = rng.uniform(0.12, 0.2) * size
        # peak gradient of a gaussian is A / (w sqrt(e)); exceed the carrier
        amp = rng.uniform(1.3, 1.8) * k * width * np.sqrt(np.e) * rng.choice([-1, 1])
        bumps.append((rng.uniform(0.3, 0.7) * size, rng.uniform(0.3, 0.7) * size, amp, width))
    pattern = FingerPattern(size, period, direction, warp, bumps, [], rng.uniform(0, 2 * np.pi))
    pattern.vortices = _place_vortices(pattern, rng)
    _snap_vortices(pattern)
    return pattern


def _smooth_phase(p: FingerPattern, x, y, with_grad: bool = False):
    k = 2 * np.pi / p.period
    cd, sd = np.cos(p.direction), np.sin(p.direction)
    phase = k * (x * cd + y * sd) + p.offset
    gx = np.full(np.shape(phase), k * cd)
    gy = np.full(np.shape(phase), k * sd)
    for amp, kx, ky, ph in p.warp:
        arg = kx * x + ky * y + ph
        phase = phase + amp * np.sin(arg)
        gx = gx + amp * kx * np.cos(arg)
        gy = gy + amp * ky * np.cos(arg)
    for bx, by, amp, width in p.bumps:
        g = amp * np.exp(-((x - bx) ** 2 + (y - by) ** 2) / (2 * width ** 2))
        phase = phase + g
        gx = gx - g * (x - bx) / width ** 2
        gy = gy - g * (y - by) / width ** 2
    if with_grad:
        return phase, gx, gy
    return phase


def _place_vortices(p: FingerPattern, rng: np.random.Generator) -> list[tuple[float, float, int]]:
    size = p.size
    k = 2 * np.pi / p.period
    target = int(round(rng.uniform(10, 16) * (size / 256.0) ** 2))
    margin = 20
    spacing = 3.0 * p.period
    out: list[tuple[float, float, int]] = []
    for _ in range(target * 60):
        if len(out) >= target:
            break
        x, y = rng.uniform(margin, size - margin, size=2)
        _, gx, gy = _smooth_phase(p, np.array(x), np.array(y), with_grad=True)
        if np.hypot(gx, gy) < 0.6 * k:
            continue  # too close to a singular point
        if any(np.hypot(x - vx, y - vy) < spacing for vx, vy, _ in out):
            continue
        if any(np.hypot(x - bx, y - by) < 0.8 * w for bx, by, _, w in p.bumps):
            continue
        out.append((float(x), float(y), int(rng.choice([-1, 1]))))
    return out


def _phase_field(p: FingerPattern, jitter: tuple[float, float, float] = (0.0, 0.0, 0.0)):
    """Full phase, its gradient without the vortex singularities, on the grid."""
    dx, dy, dphase = jitter
    yy, xx = np.mgrid[0:p.size, 0:p.size].astype(float)
    xs, ys = xx - dx, yy - dy
    phase, gx, gy = _smooth_phase(p, xs, ys, with_grad=True)
    phase = phase + dphase
    for vx, vy, s in p.vortices:
        rx, ry = xs - vx, ys - vy
        r2 = rx * rx + ry * ry + 1e-9
        phase = phase + s * np.arctan2(ry, rx)
        gx = gx - s * ry / r2
        gy = gy + s * rx / r2
    return phase, gx, gy


def _vortex_frame(p: FingerPattern, i: int):
    """Unit smooth-phase gradient at vortex ``i`` (other vortices included),
    its magnitude, and the carrier phase just off the singularity on the
    side where the vortex inserts its extra line."""
    vx, vy, s = p.vortices[i]
    phase, gx, gy = _smooth_phase(p, np.array(vx), np.array(vy), with_grad=True)
    phase, gx, gy = float(phase), float(gx), float(gy)
    for j, (ox, oy, os_) in enumerate(p.vortices):
        if j != i:
            rx, ry = vx - ox, vy - oy
            r2 = rx * rx + ry * ry
            phase += os_ * np.arctan2(ry, rx)
            gx -= os_ * ry / r2
            gy += os_ * rx / r2
    g = np.array([gx, gy])
    mag = float(np.linalg.norm(g))
    g /= mag
    # the extra line lies on the side of s * (gradient rotated +90 deg in x/y)
    extra = s * np.array([-g[1], g[0]])
    return g, mag, extra, phase + s * np.arctan2(extra[1], extra[0])


def _snap_vortices(p: FingerPattern, sweeps: int = 4) -> None:
    """Slide each vortex along the phase gradient until the carrier phase on
    its extra-line side is 0 (a clean ridge ending) or pi (a clean
    bifurcation of the dark ridges)."""
    for _ in range(sweeps):
        for i, (vx, vy, s) in enumerate(p.vortices):
            g, mag, _, ph = _vortex_frame(p, i)
            delta = (ph + np.pi / 2) % np.pi - np.pi / 2  # distance to nearest of 0, pi
            step = -delta / mag
            p.vortices[i] = (vx + step * g[0], vy + step * g[1], s)


def _vortex_truth(p: FingerPattern, jitter=(0.0, 0.0, 0.0)) -> list[Minutia]:
    """Planted minutiae of the snapped vortices.

    On the extra-line side of a vortex the carrier gains one period. With a
    bright carrier there (phase 0) a dark ridge ends and the minutia points
    into that side. With a dark carrier (phase pi) the dark ridges fork on
    that side, so the minutia points the other way along the unforked
    branch, and the fork of the ridge centre lines sits a quarter period
    beyond the singularity.
    """
    dx, dy, _ = jitter
    out = []
    for i, (vx, vy, _) in enumerate(p.vortices):
        _, _, extra, ph = _vortex_frame(p, i)
        theta = float(np.arctan2(extra[0], -extra[1]))
        if np.cos(ph) > 0:
            out.append(Minutia(vx + dx, vy + dy, theta % (2 * np.pi), "ending", 1.0))
        else:
            shift = p.period / 4
            out.append(Minutia(vx + dx + shift * extra[0], vy + dy + shift * extra[1],
                               theta % (2 * np.pi), "bifurcation", 1.0))
    return out


def ridge_image(phase: np.ndarray, sharpness: float = 2.0) -> np.ndarray:
    """Dark ridges where cos(phase) < 0, soft-saturated profile in [0, 1]."""
    return 0.5 + 0.5 * np.tanh(sharpness * np.cos(phase)) / np.tanh(sharpness)


def render_print(pattern: FingerPattern, impression_seed: int | None = None) -> PrintSample:
    jitter = (0.0, 0.0, 0.0)
    if impression_seed is not None:
        rng = np.random.default_rng([impression_seed, 2])
        jitter = (float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3)), 0.0)
    phase, gx, gy = _phase_field(pattern, jitter)
    img = ridge_image(phase)
    orient = np.mod(np.arctan2(gx, -gy) + np.pi / 2, np.pi)
    truth = _vortex_truth(pattern, jitter)
    sing = [(bx + jitter[0], by + jitter[1]) for bx, by, _, _ in pattern.bumps]
    return PrintSample(img, truth, orient, sing)


def sensor_transform(img: np.ndarray, sensor: SensorProfile, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 3])
    out = np.asarray(img, dtype=np.float64)
    if sensor.blur > 0:
        out = ndimage.gaussian_filter(out, sensor.blur, mode="reflect")
    out = np.clip(out, 0.0, 1.0) ** sensor.gamma
    if sensor.noise_sigma > 0:
        out = out + rng.normal(0.0, sensor.noise_sigma, out.shape)
    if sensor.dot_density > 0:
        dots = np.random.default_rng([sensor.dot_seed, 4]).random(out.shape) < sensor.dot_density
        out = np.where(dots, out * 0.35, out)
    return np.clip(out, 0.0, 1.0)


def render_live(seed: int, sensor: SensorProfile, size: int = 256,
                impression_seed: int | None = None) -> PrintSample:
    """Live print with planted truth, passed through the sensor."""
    period = RIDGE_PERIOD * sensor.resolution_scale
    sample = render_print(make_pattern(seed, size, period), impression_seed)
    sample.image = sensor_transform(sample.image, sensor, derive_seed(seed, impression_seed, sensor.id))
    return sample


def gen_live_print(seed: int, sensor: SensorProfile, size: int = 256) -> np.ndarray:
    return render_live(seed, sensor, size).image


# ---------------------------------------------------------------------------
# materials


def apply_material_style(img, material: MaterialProfile, seed: int) -> np.ndarray:
    """Statistics-level degradations of a [0, 1] print; neutral is identity."""
    out = np.asarray(img, dtype=np.float64)
    if material.is_neutral():
        return out.copy()
    rng = np.random.default_rng([seed, 5])
    if material.thickening > 0:
        fat = ndimage.grey_erosion(out, size=(3, 3), mode="reflect")
        out = (1 - material.thickening) * out + material.thickening * fat
    if material.blur > 0:
        out = ndimage.gaussian_filter(out, material.blur, mode="reflect")
    if material.contrast_gain != 1.0 or material.contrast_offset != 0.0:
        out = (out - 0.5) * material.contrast_gain + 0.5 + material.contrast_offset
    if material.speckle > 0:
        speck = rng.normal(0.0, 1.0, out.shape)
        out = out + material.speckle * ndimage.gaussian_filter(speck, 0.7) * 2.0
    if material.blob_density > 0:
        n_blobs = rng.poisson(material.blob_density * out.size / 10_000)
        if n_blobs:
            yy, xx = np.mgrid[0:out.shape[0], 0:out.shape[1]]
            fade = np.zeros(out.shape)
            for _ in range(n_blobs):
                cx, cy = rng.uniform(0, out.shape[1]), rng.uniform(0, out.shape[0])
                r = rng.uniform(3, 7)
                fade = np.maximum(fade, np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r)))
            out = out * (1 - 0.7 * fade) + 0.8 * 0.7 * fade
    return np.clip(out, 0.0, 1.0)


def mix_materials(a: MaterialProfile, b: MaterialProfile, ratio: float, id: str | None = None) -> MaterialProfile:
    """Parameter-wise linear blend; ratio 0 gives ``a``, ratio 1 gives ``b``."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    if ratio == 0.0:
        return replace(a, id=id or a.id)
    if ratio == 1.0:
        return replace(b, id=id or b.id)
    values = {}
    for f in fields(MaterialProfile):
        if f.name == "id":
            continue
        values[f.name] = (1 - ratio) * getattr(a, f.name) + ratio * getattr(b, f.name)
    return MaterialProfile(id or f"{a.id}+{b.id}@{ratio:g}", **values)


def material_from_dict(d: dict) -> MaterialProfile:
    return MaterialProfile(**d)


def sensor_from_dict(d: dict) -> SensorProfile:
    return SensorProfile(**d)


def profile_dict(p) -> dict:
    return asdict(p)


def texture_stats(img: np.ndarray) -> np.ndarray:
    """Small hand-crafted statistic vector used by the separability checks."""
    a = np.asarray(img, dtype=np.float64)
    hp = a - ndimage.gaussian_filter(a, 1.0)
    bp = ndimage.gaussian_filter(a, 1.0) - ndimage.gaussian_filter(a, 3.0)
    return np.array([a.mean(), a.std(), np.abs(hp).mean(), bp.std(), np.percentile(a, 5), np.percentile(a, 95)])


def orientation_error(sample: PrintSample, field_: OrientationField) -> float:
    """Mean angular error between the planted and an estimated block field."""
    truth = sample.block_orientation(field_.block)
    rows, cols = truth.shape
    est = field_.theta[:rows, :cols]
    return float(np.mean(angle_diff(est, truth, np.pi)))


def render_spoof(seed: int, material: MaterialProfile, sensor: SensorProfile, size: int = 256,
                 impression_seed: int | None = None) -> np.ndarray:
    """A spoof cast from the finger ``seed``: material degradation of the
    clean ridge pattern, then the sensor."""
    period = RIDGE_PERIOD * sensor.resolution_scale
    clean = render_print(make_pattern(seed, size, period), impression_seed).image
    styled = apply_material_style(clean, material, derive_seed(seed, impression_seed, material.id))
    return sensor_transform(styled, sensor, derive_seed(seed, impression_seed, sensor.id, material.id))


@dataclass
class DatasetConfig:
    n_subjects: int = 40
    materials: list[MaterialProfile] = field(default_factory=lambda: list(DEFAULT_MATERIALS.values()))
    sensors: list[SensorProfile] = field(default_factory=lambda: [DEFAULT_SENSORS["A"]])
    impressions: int = 2
    seed: int = 0
    size: int = 256
    test_fraction: float = 0.5
    live_impressions: int | None = None  # defaults to ``impressions``

    def __post_init__(self):
        if len(self.materials) < 2:
            raise ValueError("a dataset needs at least 2 materials")
        if not self.sensors:
            raise ValueError("a dataset needs at least 1 sensor")
        if len({m.id for m in self.materials}) != len(self.materials):
            raise ValueError("material ids must be unique")
        if self.n_subjects < 2 or self.impressions < 1:
            raise ValueError("need >= 2 subjects and >= 1 impression")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.size % 16:
            raise ValueError("size must be divisible by 16")


def subject_split(n_subjects: int, test_fraction: float, seed: int) -> dict[str, str]:
    names = [f"s{i:04d}" for i in range(n_subjects)]
    order = np.random.default_rng([seed, 6]).permutation(n_subjects)
    n_test = min(max(1, int(round(test_fraction * n_subjects))), n_subjects - 1)
    test = {names[i] for i in order[:n_test]}
    return {n: ("test" if n in test else "train") for n in names}


def gen_dataset(config: DatasetConfig, out_dir: str | Path) -> DatasetManifest:
    """Write PGM lives and spoofs plus ``manifest.csv`` and ``profiles.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    split = subject_split(config.n_subjects, config.test_fraction, config.seed)
    live_imp = config.live_impressions or config.impressions
    records = []
    for sensor in config.sensors:
        for subject, part in split.items():
            finger = derive_seed(config.seed, "finger", subject)
            (out / sensor.id / "live").mkdir(parents=True, exist_ok=True)
            for k in range(live_imp):
                rel = f"{sensor.id}/live/{subject}_{k}.pgm"
                img = render_live(finger, sensor, config.size, impression_seed=derive_seed(finger, "live", k)).image
                write_image(img, out / rel)
                records.append(ManifestRecord(rel, "live", None, sensor.id, subject, part))
            for mat in config.materials:
                (out / sensor.id / mat.id).mkdir(parents=True, exist_ok=True)
                for k in range(config.impressions):
                    rel = f"{sensor.id}/{mat.id}/{subject}_{k}.pgm"
                    img = render_spoof(finger, mat, sensor, config.size, derive_seed(finger, mat.id, k))
                    write_image(img, out / rel)
                    records.append(ManifestRecord(rel, "spoof", mat.id, sensor.id, subject, part))
    manifest = DatasetManifest(records, out)
    manifest.validate()
    save_manifest(manifest, out / "manifest.csv")
    profiles = {"materials": [asdict(m) for m in config.materials], "sensors": [asdict(s) for s in config.sensors],
                "seed": config.seed, "size": config.size}
    (out / "profiles.json").write_text(json.dumps(profiles, indent=1, sort_keys=True) + "\n")
    return manifest


def load_profiles(data_dir: str | Path) -> tuple[dict[str, MaterialProfile], dict[str, SensorProfile]]:
    raw = json.loads((Path(data_dir) / "profiles.json").read_text())
    return ({m["id"]: MaterialProfile(**m) for m in raw["materials"]},
            {s["id"]: SensorProfile(**s) for s in raw["sensors"]})
