"""UMG training (alternating decoder / discriminator updates), synthesis of
cross-material spoof and live patches, cross-sensor synthesis and the
augmentation bookkeeping around them."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import NumericError, Tensor, adam, backward, cross_entropy, global_avg_pool, linear, no_grad, optimizer_step
from .data import PatchBank, concat_banks
from .io import DatasetManifest, ManifestRecord, write_image
from .networks import (
    CheckpointError,
    Decoder,
    Discriminator,
    Encoder,
    build_decoder,
    build_discriminator,
    build_encoder,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from .seeding import derive_seed
from .style import (
    StyleLossConfig,
    adain,
    content_loss_from_features,
    disc_adv_loss,
    gen_adv_loss,
    generator_objective,
    interpolate_features,
    style_loss_from_taps,
)

log = logging.getLogger(__name__)

PROVENANCE_HEADER = ("out_path", "content_path", "style_path", "material_a", "material_b", "alpha", "seed")


class TrainingError(RuntimeError):
    pass


class HygieneError(RuntimeError):
    pass


@dataclass
class UmgConfig:
    style: StyleLossConfig = field(default_factory=StyleLossConfig)
    batch_size: int = 8
    lr: float = 1e-4
    epochs: int = 10
    max_steps: int | None = None  # caps epochs * steps_per_epoch

    def __post_init__(self):
        if self.batch_size < 1 or self.lr <= 0 or self.epochs < 0:
            raise ValueError("batch_size >= 1, lr > 0 and epochs >= 0 required")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")


@dataclass
class UmgModel:
    encoder: Encoder
    decoder: Decoder
    discriminator: Discriminator
    cfg: UmgConfig
    role: str  # "spoof" or "live"
    groups: list[str]
    log: list[dict] = field(default_factory=list)
    restored_steps: int = 0  # steps taken before a checkpoint was reloaded

    @property
    def steps(self) -> int:
        return self.restored_steps + len(self.log)

    @property
    def trained(self) -> bool:
        return self.steps > 0


def _sample_pairs(rng: np.random.Generator, groups: dict[str, np.ndarray], n: int, cross: bool):
    """``n`` (group_a, index_a, group_b, index_b) draws; ordered distinct
    group pairs when ``cross``, else both from the single pool."""
    names = sorted(groups)
    out = []
    for _ in range(n):
        if cross:
            a, b = rng.choice(len(names), size=2, replace=False)
            ga, gb = names[a], names[b]
        else:
            ga = gb = names[int(rng.integers(len(names)))]
        out.append((ga, int(rng.integers(len(groups[ga]))), gb, int(rng.integers(len(groups[gb])))))
    return out


def train_umg(groups: dict[str, np.ndarray], cfg: UmgConfig | None = None, seed: int = 0, role: str = "spoof",
              encoder: Encoder | None = None) -> UmgModel:
    """Train a UMG wrapper on patches grouped by material (``role="spoof"``)
    or on a single live pool (``role="live"``).

    Each step draws a batch of (content, style) pairs, takes one Adam step on
    the decoder for the combined generator objective and then one on the
    discriminator for the negated discriminator objective.
    """
    cfg = cfg or UmgConfig()
    groups = {k: np.asarray(v, dtype=np.float32) for k, v in groups.items() if len(v)}
    if role == "spoof":
        if len(groups) < 2:
            raise ValueError("spoof UMG needs patches from at least 2 materials")
    elif role == "live":
        if len(groups) != 1:
            raise ValueError("live UMG takes exactly one live patch pool")
    else:
        raise ValueError(f"unknown UMG role {role!r}")
    encoder = encoder or build_encoder(derive_seed(seed, "encoder"))
    decoder = build_decoder(encoder, derive_seed(seed, "decoder"))
    disc = build_discriminator(derive_seed(seed, "discriminator"))
    model = UmgModel(encoder, decoder, disc, cfg, role, sorted(groups))

    total = sum(len(v) for v in groups.values())
    steps = cfg.epochs * math.ceil(total / cfg.batch_size)
    if cfg.max_steps is not None:
        steps = min(steps, cfg.max_steps)
    rng = np.random.default_rng(derive_seed(seed, "umg-batches"))
    opt_g = adam(decoder.params(), lr=cfg.lr)
    opt_d = adam(disc.params(), lr=cfg.lr)
    floor = 2 * math.log(cfg.style.prob_clamp)
    for step in range(steps):
        pairs = _sample_pairs(rng, groups, cfg.batch_size, cross=(role == "spoof"))
        content = np.stack([groups[ga][ia] for ga, ia, _, _ in pairs])
        style = np.stack([groups[gb][ib] for _, _, gb, ib in pairs])
        try:
            entry = umg_step(model, content, style, opt_g, opt_d)
        except NumericError as exc:
            raise TrainingError(f"non-finite value at UMG step {step}: {exc}") from None
        if not all(math.isfinite(v) for v in entry.values()):
            raise TrainingError(f"non-finite loss at UMG step {step}: {entry}")
        if not floor - 1e-6 <= entry["disc"] <= 1e-6:
            raise TrainingError(f"discriminator objective {entry['disc']} outside [{floor}, 0] at step {step}")
        entry["step"] = step
        model.log.append(entry)
        if step % 50 == 0 or step == steps - 1:
            log.info("umg %s step %d/%d content %.1f style %.1f adv %.4f disc %.4f", role, step + 1, steps,
                     entry["content"], entry["style"], entry["adv"], entry["disc"])
    return model


def save_umg(model: UmgModel, path: str | Path, meta: dict | None = None) -> None:
    body = {"role": model.role, "groups": model.groups, "steps": model.steps,
            "umg": {"batch_size": model.cfg.batch_size, "lr": model.cfg.lr, "epochs": model.cfg.epochs,
                    "max_steps": model.cfg.max_steps, "style": asdict(model.cfg.style)}}
    if model.log:
        body["final_losses"] = {k: v for k, v in model.log[-1].items() if k != "step"}
    body.update(meta or {})
    save_checkpoint(path, {"encoder": model.encoder, "decoder": model.decoder,
                           "discriminator": model.discriminator}, body)


def load_umg(path: str | Path) -> UmgModel:
    header, _ = read_checkpoint(path)
    meta = header.get("meta", {})
    if "role" not in meta:
        raise CheckpointError(f"{path}: not a UMG checkpoint")
    nets = load_checkpoint(path)
    raw = dict(meta["umg"])
    style = raw.pop("style")
    style["tap_indices"] = tuple(style["tap_indices"]) if style.get("tap_indices") is not None else None
    cfg = UmgConfig(style=StyleLossConfig(**style), **raw)
    nets["encoder"].freeze()
    return UmgModel(nets["encoder"], nets["decoder"], nets["discriminator"], cfg, meta["role"], meta["groups"],
                    restored_steps=int(meta["steps"]))


def umg_step(model: UmgModel, content: np.ndarray, style: np.ndarray, opt_g, opt_d) -> dict:
    """One decoder update on the generator objective, then one discriminator
    update; returns the loss components before the updates."""
    enc, dec, disc, scfg = model.encoder, model.decoder, model.discriminator, model.cfg.style
    with no_grad():
        f_c = enc.taps(content)[-1]
        style_taps = enc.taps(style)
        target = interpolate_features(f_c, adain(f_c, style_taps[-1], scfg.epsilon), scfg.alpha)
    fake = dec(target)
    fake_taps = enc.taps(fake)
    l_c = content_loss_from_features(fake_taps[-1], target)
    l_s = style_loss_from_taps(fake_taps, style_taps, scfg)
    l_adv = gen_adv_loss(disc(fake), scfg)
    total = generator_objective(l_c, l_s, l_adv, scfg)
    grads = backward(total)
    optimizer_step(opt_g, dec.params(), [grads.get(p) for p in dec.params()])

    d_obj = disc_adv_loss(disc(style), disc(fake.data), scfg)
    grads = backward(-d_obj)
    optimizer_step(opt_d, disc.params(), [grads.get(p) for p in disc.params()])
    return {"content": float(l_c.data), "style": float(l_s.data), "adv": float(l_adv.data),
            "total": float(total.data), "disc": float(d_obj.data)}


def pretrain_encoder(bank: PatchBank, seed: int = 0, epochs: int = 2, batch_size: int = 32,
                     lr: float = 1e-3) -> tuple[Encoder, list[dict]]:
    """Train a fresh encoder as a texture classifier over the bank's classes
    (live plus each material), then freeze it for use as f(.)."""
    names = sorted({m or "live" for m in bank.material})
    if len(names) < 2:
        raise ValueError("encoder pretraining needs at least 2 texture classes")
    y = np.array([names.index(m or "live") for m in bank.material])
    enc = build_encoder(derive_seed(seed, "encoder"))
    enc.mode = "desk-pretrained"
    for p in enc.params():
        p.requires_grad = True
    rng = np.random.default_rng(derive_seed(seed, "pretrain"))
    head_w = Tensor((rng.normal(0, 1, (enc.channels[-1], len(names))) * 0.01).astype(bank.pixels.dtype),
                    requires_grad=True)
    head_b = Tensor(np.zeros(len(names), bank.pixels.dtype), requires_grad=True)
    params = enc.params() + [head_w, head_b]
    opt = adam(params, lr=lr)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            # deepest tap lives on the 0..255 input scale; shrink before the head
            feats = global_avg_pool(enc.taps(bank.pixels[idx])[-1]) * (1.0 / enc.input_scale)
            loss = cross_entropy(linear(feats, head_w, head_b), y[idx])
            grads = backward(loss)
            optimizer_step(opt, params, [grads.get(p) for p in params])
            history.append({"epoch": epoch, "loss": float(loss.data)})
    enc.freeze()
    return enc, history


# ---------------------------------------------------------------------------
# synthesis


def synthesize_batch(model: UmgModel, content: np.ndarray, style: np.ndarray, alpha: float,
                     chunk: int = 16) -> np.ndarray:
    """g((1 - alpha) f(c) + alpha AdaIN(f(c), f(s))) for aligned batches."""
    content = np.asarray(content, dtype=np.float32)
    style = np.asarray(style, dtype=np.float32)
    if content.shape != style.shape or content.ndim != 3:
        raise ValueError(f"content {content.shape} and style {style.shape} must be equal (N, H, W)")
    out = []
    with no_grad():
        for i in range(0, len(content), chunk):
            f_c = model.encoder.taps(content[i:i + chunk])[-1]
            f_s = model.encoder.taps(style[i:i + chunk])[-1]
            t = interpolate_features(f_c, adain(f_c, f_s, model.cfg.style.epsilon), alpha)
            out.append(model.decoder(t).data[:, 0])
    if not out:
        return np.zeros_like(content)
    return np.clip(np.concatenate(out), 0.0, 1.0)


def synthesize_pair(model: UmgModel, content_patch, style_patch, alpha: float = 0.5) -> np.ndarray:
    return synthesize_batch(model, np.asarray(content_patch)[None], np.asarray(style_patch)[None], alpha)[0]


@dataclass
class SynthesisPlan:
    n_synth: int
    alpha: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_synth < 1:
            raise ValueError("n_synth must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def _patch_id(bank: PatchBank, i: int) -> str:
    img = int(bank.image[i])
    same = np.flatnonzero(bank.image[: i + 1] == img)
    return f"{bank.image_ids[img]}#{len(same) - 1}"


def _synthesize(model: UmgModel, bank: PatchBank, plan: SynthesisPlan, cross: bool, label: int) -> PatchBank:
    pools: dict[str, np.ndarray] = {}
    for i, m in enumerate(bank.material):
        pools.setdefault(m or "live", []).append(i)
    pools = {k: np.array(v) for k, v in pools.items()}
    if cross and len(pools) < 2:
        raise ValueError("material pool exhausted: cross-material synthesis needs >= 2 materials")
    if not pools:
        raise ValueError("empty source patch pool")
    names = sorted(pools)
    c_idx, s_idx, prov = [], [], []
    for k in range(plan.n_synth):
        seed_k = derive_seed(plan.seed, "pair", k)
        rng = np.random.default_rng(seed_k)
        if cross:
            a, b = rng.choice(len(names), size=2, replace=False)
            ma, mb = names[a], names[b]
        else:
            ma = mb = names[int(rng.integers(len(names)))]
        ci = int(pools[ma][rng.integers(len(pools[ma]))])
        si = int(pools[mb][rng.integers(len(pools[mb]))])
        if not cross and len(pools[mb]) > 1:
            while si == ci:
                si = int(pools[mb][rng.integers(len(pools[mb]))])
        c_idx.append(ci)
        s_idx.append(si)
        prov.append({"out_path": f"synth/{model.role}_{k:06d}.pgm", "content_path": _patch_id(bank, ci),
                     "style_path": _patch_id(bank, si), "material_a": bank.material[ci] or "",
                     "material_b": bank.material[si] or "", "alpha": plan.alpha, "seed": seed_k,
                     "trained": model.trained})
    pixels = synthesize_batch(model, bank.pixels[c_idx], bank.pixels[s_idx], plan.alpha).astype(np.float32)
    if label:
        materials = [f"{p['material_a']}~{p['material_b']}" for p in prov]
    else:
        materials = [None] * plan.n_synth
    sensors = [bank.sensor[i] for i in s_idx]
    ids = [p["out_path"] for p in prov]
    return PatchBank(pixels, np.full(plan.n_synth, label, dtype=int), materials, sensors,
                     np.arange(plan.n_synth), ids, np.ones(plan.n_synth, dtype=bool), prov)


def synthesize_spoof_set(model: UmgModel, spoofs: PatchBank, plan: SynthesisPlan) -> PatchBank:
    """Cross-material syntheses: content from material a, style from b != a."""
    spoofs = spoofs.subset(spoofs.label == 1)
    return _synthesize(model, spoofs, plan, cross=True, label=1)


def synthesize_live_set(model: UmgModel, lives: PatchBank, plan: SynthesisPlan) -> PatchBank:
    """Live syntheses from pairs of two live patches."""
    lives = lives.subset(lives.label == 0)
    return _synthesize(model, lives, plan, cross=False, label=0)


def cross_sensor_synthesize(target_lives: PatchBank, source: PatchBank, counts: tuple[int, int], seed: int,
                            cfg: UmgConfig | None = None, max_target_images: int = 100,
                            encoder: Encoder | None = None) -> tuple[UmgModel, PatchBank]:
    """Train a live UMG on target-sensor lives and transfer source-sensor
    lives and spoofs into the target style; labels and materials pass
    through, every output is tagged with the target sensor."""
    target_sensors = set(target_lives.sensor)
    source_sensors = set(source.sensor)
    if len(target_sensors) != 1:
        raise ValueError(f"target lives must come from exactly one sensor, got {sorted(target_sensors)}")
    if target_sensors & source_sensors:
        raise ValueError(f"target and source share sensor ids {sorted(target_sensors & source_sensors)}")
    if np.any(target_lives.label != 0):
        raise ValueError("target pool must contain live patches only")
    if len(set(target_lives.image.tolist())) > max_target_images:
        raise ValueError(f"more than {max_target_images} target live images")
    (target_id,) = target_sensors
    model = train_umg({"live": target_lives.pixels}, cfg, derive_seed(seed, "cross-sensor-umg"), role="live",
                      encoder=encoder)
    n_live, n_spoof = counts
    rng = np.random.default_rng(derive_seed(seed, "cross-sensor-pairs"))
    out = []
    for label, n in ((0, n_live), (1, n_spoof)):
        pool = np.flatnonzero(source.label == label)
        if n == 0:
            continue
        if len(pool) == 0:
            raise ValueError(f"source has no {'spoof' if label else 'live'} patches")
        ci = pool[rng.integers(len(pool), size=n)]
        si = rng.integers(len(target_lives), size=n)
        pixels = synthesize_batch(model, source.pixels[ci], target_lives.pixels[si], model.cfg.style.alpha)
        prov = [{"out_path": f"synth/xs_{label}_{k:06d}.pgm", "content_path": _patch_id(source, int(c)),
                 "style_path": _patch_id(target_lives, int(s)), "material_a": source.material[c] or "",
                 "material_b": "", "alpha": model.cfg.style.alpha, "seed": seed, "trained": model.trained}
                for k, (c, s) in enumerate(zip(ci, si))]
        out.append(PatchBank(pixels.astype(np.float32), np.full(n, label, dtype=int),
                             [source.material[c] for c in ci], [target_id] * n, np.arange(n),
                             [p["out_path"] for p in prov], np.ones(n, dtype=bool), prov))
    return model, concat_banks(out)


# ---------------------------------------------------------------------------
# augmentation and audits


def augment(real: DatasetManifest, synthetic_sets: list[DatasetManifest]) -> DatasetManifest:
    """Merge synthetic manifests into a real one; synthetic records are
    flagged and may only sit in the training split."""
    real_paths = {r.path for r in real.records}
    records = list(real.records)
    for s in synthetic_sets:
        for r in s.records:
            if r.split != "train":
                raise HygieneError(f"synthetic record {r.path} assigned to the {r.split} split")
            if r.path in real_paths:
                raise HygieneError(f"synthetic record {r.path} collides with a real record")
            records.append(ManifestRecord(r.path, r.label, r.material, r.sensor, r.subject, "train", True))
    return DatasetManifest(records, real.root)


def augment_bank(real: PatchBank, synthetic: list[PatchBank]) -> PatchBank:
    for s in synthetic:
        if not np.all(s.synthetic):
            raise HygieneError("synthetic bank contains unflagged patches")
    return concat_banks([real] + list(synthetic))


def provenance_materials(p: dict) -> set[str]:
    out = set()
    for key in ("material_a", "material_b"):
        out.update(x for x in str(p.get(key, "")).split("~") if x)
    for key in ("content_path", "style_path"):
        path = str(p.get(key, ""))
        out.update(part for part in Path(path.split("#")[0]).parts)
    return out


def audit_leave_one_out(train: PatchBank, held_out: str) -> None:
    """No real patch of ``held_out`` and no synthetic patch whose provenance
    mentions it may reach training."""
    for i, m in enumerate(train.material):
        if not train.synthetic[i] and m == held_out:
            raise HygieneError(f"real patch of held-out material {held_out} in training (patch {i})")
    for i, p in enumerate(train.provenance):
        if train.synthetic[i] and held_out in provenance_materials(p):
            raise HygieneError(f"synthetic patch {i} derives from held-out material {held_out}: {p}")
    for i, m in enumerate(train.material):
        if train.synthetic[i] and m and held_out in m.split("~"):
            raise HygieneError(f"synthetic patch {i} labelled with held-out material {held_out}")


def write_synthetic(bank: PatchBank, out_dir: str | Path, subject: str = "synthetic") -> DatasetManifest:
    """Write synthetic patches as PGM plus ``provenance.csv``; returns the
    matching train-split manifest."""
    out = Path(out_dir)
    records = []
    rows = []
    for i in range(len(bank)):
        p = bank.provenance[i]
        path = out / p["out_path"]
        path.parent.mkdir(parents=True, exist_ok=True)
        write_image(bank.pixels[i], path)
        records.append(ManifestRecord(p["out_path"], "spoof" if bank.label[i] else "live", bank.material[i],
                                      bank.sensor[i], subject, "train", True))
        rows.append([p["out_path"], p["content_path"], p["style_path"], p["material_a"], p["material_b"],
                     f"{p['alpha']:g}", str(p["seed"])])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "provenance.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROVENANCE_HEADER)
        w.writerows(rows)
    return DatasetManifest(records, out)


def read_provenance(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PROVENANCE_HEADER:
            raise ValueError(f"{path}: unexpected provenance header {reader.fieldnames}")
        return list(reader)
