"""Encoder with taps, mirrored decoder, DCGAN-style discriminator and a
compact depthwise-separable spoof detector, plus the UMGW checkpoint format.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import (
    DimensionError,
    Tensor,
    conv2d,
    depthwise_conv2d,
    get_default_dtype,
    global_avg_pool,
    leaky_relu,
    linear,
    pool_max2,
    relu,
    sigmoid,
    softmax,
    upsample_nearest2,
)
from .autodiff.tensor import as_tensor

ENCODER_CHANNELS = (16, 32, 64, 128)
DISCRIMINATOR_CHANNELS = (16, 32, 64)
REFLECT1 = ("reflect", 1)
ZERO1 = ("zero", 1)


class CheckpointError(IOError):
    pass


def _he(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Network:
    """Ordered collection of named parameter tensors."""

    kind = "network"

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def _add(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        p = Tensor(data, requires_grad=trainable, name=name)
        self._params[name] = p
        return p

    def params(self) -> list[Tensor]:
        return list(self._params.values())

    def named_params(self) -> dict[str, Tensor]:
        return dict(self._params)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        if missing:
            raise CheckpointError(f"{self.kind}: missing parameters {sorted(missing)}")
        for k, p in self._params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise CheckpointError(f"{self.kind}.{k}: shape {arr.shape} != {p.shape}")
            p.data[...] = arr

    def weight_norm(self) -> float:
        return float(np.sqrt(sum(float((p.data.astype(np.float64) ** 2).sum()) for p in self._params.values())))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, p in self._params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def config(self) -> dict:
        return {}


def _as_images(img) -> Tensor:
    """Accept (H, W), (N, H, W) or (N, 1, H, W) arrays/tensors."""
    if isinstance(img, Tensor):
        t = img
    else:
        arr = np.asarray(img)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(get_default_dtype())
        t = Tensor(arr)
    if t.ndim == 2:
        t = Tensor(t.data[None, None]) if not t.requires_grad else t.reshape(1, 1, *t.shape)
    elif t.ndim == 3:
        t = t.reshape(t.shape[0], 1, t.shape[1], t.shape[2])
    if t.ndim != 4 or t.shape[1] != 1:
        raise DimensionError(f"expected grayscale images, got shape {t.shape}")
    return t


class Encoder(Network):
    """Frozen conv3x3+relu blocks with a tap after each block and 2x2 max
    pooling between blocks. Inputs in [0, 1] are multiplied by
    ``input_scale`` first (pixel-range convention of ImageNet encoders)."""

    kind = "encoder"

    def __init__(self, seed: int = 0, mode: str = "seeded-random", channels=ENCODER_CHANNELS,
                 input_scale: float = 255.0, dtype=None):
        super().__init__()
        if mode not in ("seeded-random", "desk-pretrained"):
            raise ValueError(f"unknown encoder mode {mode!r}")
        dtype = dtype or get_default_dtype()
        self.seed, self.mode, self.channels = int(seed), mode, tuple(channels)
        self.input_scale = float(input_scale)
        rng = np.random.default_rng([self.seed, 101])
        c_in = 1
        for i, c_out in enumerate(self.channels, start=1):
            self._add(f"conv{i}.w", _he(rng, (c_out, c_in, 3, 3), c_in * 9, dtype), trainable=False)
            self._add(f"conv{i}.b", np.zeros(c_out, dtype), trainable=False)
            c_in = c_out

    @property
    def downsample(self) -> int:
        return 2 ** (len(self.channels) - 1)

    def config(self) -> dict:
        return {"seed": self.seed, "mode": self.mode, "channels": list(self.channels),
                "input_scale": self.input_scale}

    def taps(self, img) -> list[Tensor]:
        x = _as_images(img)
        h, w = x.shape[2:]
        if h % self.downsample or w % self.downsample:
            raise DimensionError(f"encoder input {h}x{w} not divisible by {self.downsample}")
        x = x * self.input_scale
        out = []
        for i in range(1, len(self.channels) + 1):
            if i > 1:
                x = pool_max2(x)
            x = relu(conv2d(x, self._params[f"conv{i}.w"], self._params[f"conv{i}.b"], padding=REFLECT1))
            out.append(x)
        return out

    __call__ = taps

    def freeze(self) -> None:
        for p in self._params.values():
            p.requires_grad = False


def encode_with_taps(encoder: Encoder, img) -> list[Tensor]:
    return encoder.taps(img)


class Decoder(Network):
    """Mirror of the encoder: conv3x3+relu with nearest 2x upsampling where
    the encoder pools, reflection padding, no normalisation, sigmoid output.

    Encoder features live on the ``input_scale`` pixel range, so the final
    logits are divided by it before the sigmoid.
    """

    kind = "decoder"

    def __init__(self, encoder_channels=ENCODER_CHANNELS, seed: int = 0, input_scale: float = 255.0,
                 dtype=None):
        super().__init__()
        dtype = dtype or get_default_dtype()
        self.encoder_channels = tuple(encoder_channels)
        self.seed = int(seed)
        self.input_scale = float(input_scale)
        rng = np.random.default_rng([self.seed, 202])
        chans = list(reversed(self.encoder_channels))  # 128, 64, 32, 16
        plan = list(zip(chans[:-1], chans[1:])) + [(chans[-1], 1)]
        for i, (c_in, c_out) in enumerate(plan, start=1):
            self._add(f"conv{i}.w", _he(rng, (c_out, c_in, 3, 3), c_in * 9, dtype))
            self._add(f"conv{i}.b", np.zeros(c_out, dtype))
        self.n_layers = len(plan)

    def config(self) -> dict:
        return {"seed": self.seed, "encoder_channels": list(self.encoder_channels),
                "input_scale": self.input_scale}

    def __call__(self, features: Tensor) -> Tensor:
        x = as_tensor(features)
        if x.ndim != 4 or x.shape[1] != self.encoder_channels[-1]:
            raise DimensionError(f"decoder expects {self.encoder_channels[-1]} channels, got {x.shape}")
        for i in range(1, self.n_layers + 1):
            x = conv2d(x, self._params[f"conv{i}.w"], self._params[f"conv{i}.b"], padding=REFLECT1)
            if i == self.n_layers:
                return sigmoid(x * (1.0 / self.input_scale))
            x = upsample_nearest2(relu(x))
        raise AssertionError("unreachable")


def decode(decoder: Decoder, features: Tensor) -> Tensor:
    return decoder(features)


class Discriminator(Network):
    """Three stride-2 conv3x3 + leaky-relu(0.2), global average, dense, sigmoid."""

    kind = "discriminator"

    def __init__(self, seed: int = 0, channels=DISCRIMINATOR_CHANNELS, slope: float = 0.2, dtype=None):
        super().__init__()
        dtype = dtype or get_default_dtype()
        self.seed, self.channels, self.slope = int(seed), tuple(channels), float(slope)
        rng = np.random.default_rng([self.seed, 303])
        c_in = 1
        for i, c_out in enumerate(self.channels, start=1):
            self._add(f"conv{i}.w", _he(rng, (c_out, c_in, 3, 3), c_in * 9, dtype))
            self._add(f"conv{i}.b", np.zeros(c_out, dtype))
            c_in = c_out
        self._add("fc.w", _he(rng, (c_in, 1), c_in, dtype) * 0.1)
        self._add("fc.b", np.zeros(1, dtype))

    def config(self) -> dict:
        return {"seed": self.seed, "channels": list(self.channels), "slope": self.slope}

    def __call__(self, img) -> Tensor:
        x = _as_images(img)
        x = (x - 0.5) * 2.0
        for i in range(1, len(self.channels) + 1):
            x = conv2d(x, self._params[f"conv{i}.w"], self._params[f"conv{i}.b"], stride=2, padding=ZERO1)
            x = leaky_relu(x, self.slope)
        logit = linear(global_avg_pool(x), self._params["fc.w"], self._params["fc.b"])
        return sigmoid(logit).reshape(x.shape[0])


def discriminate(disc: Discriminator, img) -> Tensor:
    return disc(img)


class Detector(Network):
    """Stem conv + depthwise-separable blocks (all stride 2), global average,
    2-unit softmax head ordered (liveness, spoofness)."""

    kind = "detector"

    def __init__(self, seed: int = 0, stem: int = 16, blocks=(32, 64, 64), dtype=None):
        super().__init__()
        dtype = dtype or get_default_dtype()
        self.seed, self.stem, self.blocks = int(seed), int(stem), tuple(blocks)
        rng = np.random.default_rng([self.seed, 404])
        self._add("stem.w", _he(rng, (stem, 1, 3, 3), 9, dtype))
        self._add("stem.b", np.zeros(stem, dtype))
        c_in = stem
        for i, c_out in enumerate(self.blocks, start=1):
            self._add(f"dw{i}.w", _he(rng, (c_in, 1, 3, 3), 9, dtype))
            self._add(f"dw{i}.b", np.zeros(c_in, dtype))
            self._add(f"pw{i}.w", _he(rng, (c_out, c_in, 1, 1), c_in, dtype))
            self._add(f"pw{i}.b", np.zeros(c_out, dtype))
            c_in = c_out
        self._add("fc.w", _he(rng, (c_in, 2), c_in, dtype) * 0.1)
        self._add("fc.b", np.zeros(2, dtype))

    def config(self) -> dict:
        return {"seed": self.seed, "stem": self.stem, "blocks": list(self.blocks)}

    def logits(self, img) -> Tensor:
        x = _as_images(img)
        x = (x - 0.5) * 2.0
        p = self._params
        x = relu(conv2d(x, p["stem.w"], p["stem.b"], stride=2, padding=ZERO1))
        for i in range(1, len(self.blocks) + 1):
            x = relu(depthwise_conv2d(x, p[f"dw{i}.w"], p[f"dw{i}.b"], stride=2, padding=ZERO1))
            x = relu(conv2d(x, p[f"pw{i}.w"], p[f"pw{i}.b"]))
        return linear(global_avg_pool(x), p["fc.w"], p["fc.b"])

    def probabilities(self, img) -> Tensor:
        return softmax(self.logits(img))

    def spoofness(self, img) -> np.ndarray:
        return self.probabilities(img).data[:, 1]


def detector_forward(det: Detector, patch) -> np.ndarray:
    return det.spoofness(patch)


# ---------------------------------------------------------------------------
# builders


def build_encoder(seed: int = 0, mode: str = "seeded-random", checkpoint: str | Path | None = None,
                  **kwargs) -> Encoder:
    if mode == "desk-pretrained":
        if checkpoint is None or not Path(checkpoint).exists():
            raise CheckpointError(f"desk-pretrained encoder needs an existing checkpoint, got {checkpoint!r}")
        nets = load_checkpoint(checkpoint)
        if "encoder" not in nets:
            raise CheckpointError(f"{checkpoint}: no encoder inside")
        enc = nets["encoder"]
        enc.mode = "desk-pretrained"
        enc.freeze()
        return enc
    enc = Encoder(seed=seed, mode=mode, **kwargs)
    enc.freeze()
    return enc


def build_decoder(encoder: Encoder, seed: int = 0) -> Decoder:
    return Decoder(encoder.channels, seed=seed, input_scale=encoder.input_scale)


def build_discriminator(seed: int = 0) -> Discriminator:
    return Discriminator(seed=seed)


def build_detector(seed: int = 0) -> Detector:
    return Detector(seed=seed)


# ---------------------------------------------------------------------------
# checkpoint container
#
#   b"UMGW" | u16 version | u32 meta_len | meta JSON | u32 n_blobs |
#   per blob: u16 name_len | name | u8 ndim | u32 dims... | float32 LE data

MAGIC = b"UMGW"
FORMAT_VERSION = 1
_CLASSES = {"encoder": Encoder, "decoder": Decoder, "discriminator": Discriminator, "detector": Detector}


def save_checkpoint(path: str | Path, networks: dict[str, Network], meta: dict | None = None) -> None:
    header = {
        "networks": {name: {"kind": net.kind, "config": net.config()} for name, net in networks.items()},
        "meta": meta or {},
    }
    meta_bytes = json.dumps(header, sort_keys=True).encode()
    blobs = []
    for name, net in networks.items():
        for pname, p in net.named_params().items():
            blobs.append((f"{name}/{pname}", p.data))
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HI", FORMAT_VERSION, len(meta_bytes))
    out += meta_bytes
    out += struct.pack("<I", len(blobs))
    for name, arr in blobs:
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Raw header and blobs of a UMGW file."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, meta_len = struct.unpack_from("<HI", buf, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        pos = 10
        header = json.loads(buf[pos:pos + meta_len].decode())
        pos += meta_len
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        blobs = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            blobs[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape).copy()
            pos += 4 * n
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt ({exc})") from None
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return header, blobs


def load_checkpoint(path: str | Path, dtype=None) -> dict[str, Network]:
    header, blobs = read_checkpoint(path)
    dtype = dtype or get_default_dtype()
    nets = {}
    for name, spec in header["networks"].items():
        cls = _CLASSES[spec["kind"]]
        cfg = dict(spec["config"])
        if cls is Decoder:
            net = Decoder(cfg["encoder_channels"], seed=cfg["seed"], input_scale=cfg["input_scale"], dtype=dtype)
        elif cls is Encoder:
            net = Encoder(seed=cfg["seed"], mode=cfg["mode"], channels=cfg["channels"],
                          input_scale=cfg["input_scale"], dtype=dtype)
        elif cls is Discriminator:
            net = Discriminator(seed=cfg["seed"], channels=cfg["channels"], slope=cfg["slope"], dtype=dtype)
        else:
            net = Detector(seed=cfg["seed"], stem=cfg["stem"], blocks=cfg["blocks"], dtype=dtype)
        prefix = f"{name}/"
        net.load_state_dict({k[len(prefix):]: v for k, v in blobs.items() if k.startswith(prefix)})
        nets[name] = net
    return nets


def checkpoint_meta(path: str | Path) -> dict:
    return read_checkpoint(path)[0].get("meta", {})
