"""Image-shaped differentiable ops: convolution, pooling, statistics, losses."""

from __future__ import annotations

import numpy as np

from .tensor import (
    DimensionError,
    NumericError,
    Tensor,
    as_tensor,
    log,
    make_node,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    sqrt,
    sub,
    tsum,
)


def _parse_padding(padding) -> tuple[str, int]:
    if padding in (None, "valid", 0):
        return "valid", 0
    if isinstance(padding, tuple) and len(padding) == 2 and padding[0] in ("reflect", "zero"):
        return padding[0], int(padding[1])
    raise ValueError(f"unknown padding {padding!r}")


def pad2d(x: Tensor, amount: int, mode: str = "reflect") -> Tensor:
    """Pad the two spatial axes of an NCHW tensor by ``amount`` on each side."""
    x = as_tensor(x)
    p = int(amount)
    if p == 0:
        return x
    n, c, h, w = x.shape
    if mode == "reflect":
        if p >= h or p >= w:
            raise DimensionError(f"reflect padding {p} too large for {h}x{w}")
        out = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")

        def bw(g):
            # fold the mirrored rows, then the mirrored columns
            gh = g[:, :, p:p + h, :].copy()
            for i in range(p):
                gh[:, :, p - i, :] += g[:, :, i, :]
                gh[:, :, h - 2 - i, :] += g[:, :, h + p + i, :]
            gx = gh[:, :, :, p:p + w].copy()
            for j in range(p):
                gx[:, :, :, p - j] += gh[:, :, :, j]
                gx[:, :, :, w - 2 - j] += gh[:, :, :, w + p + j]
            return (gx,)

    elif mode == "zero":
        out = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))

        def bw(g):
            return (g[:, :, p:p + h, p:p + w],)

    else:
        raise ValueError(f"unknown pad mode {mode!r}")
    return make_node(out, (x,), bw, "pad2d")


def _window_view(xp: np.ndarray, i: int, j: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """The (..., Ho, Wo) input samples that meet kernel tap (i, j)."""
    return xp[..., i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def _windows(xc: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """im2col of a channel-first (C, N, H, W) array: (C, kh, kw, N, Ho, Wo)."""
    c, n = xc.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xc.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = _window_view(xc, i, j, stride, ho, wo)
    return cols


def _fold(gcols: np.ndarray, shape, stride: int) -> np.ndarray:
    """Adjoint of :func:`_windows`; ``shape`` is the (C, N, H, W) input shape."""
    _, kh, kw, _, ho, wo = gcols.shape
    gx = np.zeros(shape, dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            _window_view(gx, i, j, stride, ho, wo)[...] += gcols[:, i, j]
    return gx


def _out_size(h: int, w: int, kh: int, kw: int, stride: int) -> tuple[int, int]:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if kh > h or kw > w:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")
    return (h - kh) // stride + 1, (w - kw) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding="valid") -> Tensor:
    """2-D cross-correlation of NCHW ``x`` with OIHW ``weight``.

    ``padding`` is ``"valid"``, ``("reflect", p)`` or ``("zero", p)``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW/OIHW, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d: input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    mode, p = _parse_padding(padding)
    xp = pad2d(x, p, mode) if p else x
    n, c, h, w = xp.shape
    o, _, kh, kw = weight.shape
    ho, wo = _out_size(h, w, kh, kw, stride)
    xc = xp.data.transpose(1, 0, 2, 3)
    cols = _windows(xc, kh, kw, stride, ho, wo).reshape(c * kh * kw, n * ho * wo)
    wmat = weight.data.reshape(o, -1)
    out = wmat @ cols
    parents = [xp, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise DimensionError(f"conv2d bias shape {bias.shape} != ({o},)")
        out += bias.data[:, None]
        parents.append(bias)
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))
    xshape, wshape = xc.shape, weight.shape

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, -1)
        gx = gw = None
        if xp.requires_grad:
            gcols = (wmat.T @ g2).reshape(c, kh, kw, n, ho, wo)
            gx = _fold(gcols, xshape, stride).transpose(1, 0, 2, 3)
        if weight.requires_grad:
            gw = (g2 @ cols.T).reshape(wshape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=1) if bias.requires_grad else None)
        return tuple(grads)

    return make_node(out, parents, bw, "conv2d")


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
                     padding="valid") -> Tensor:
    """Per-channel convolution; ``weight`` has shape (C, 1, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[1] != 1 or weight.shape[0] != x.shape[1]:
        raise DimensionError(f"depthwise_conv2d: input {x.shape}, kernel {weight.shape}")
    mode, p = _parse_padding(padding)
    xp = pad2d(x, p, mode) if p else x
    n, c, h, w = xp.shape
    kh, kw = weight.shape[2:]
    ho, wo = _out_size(h, w, kh, kw, stride)
    k = weight.data[:, 0]
    xd = xp.data
    out = np.zeros((n, c, ho, wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            out += _window_view(xd, i, j, stride, ho, wo) * k[None, :, i, j, None, None]
    parents = [xp, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)
    xshape = xp.shape

    def bw(g):
        gx = np.zeros(xshape, dtype=g.dtype) if xp.requires_grad else None
        gw = np.zeros(weight.shape, dtype=g.dtype) if weight.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                if gx is not None:
                    _window_view(gx, i, j, stride, ho, wo)[...] += g * k[None, :, i, j, None, None]
                if gw is not None:
                    gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, _window_view(xd, i, j, stride, ho, wo))
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)) if bias.requires_grad else None)
        return tuple(grads)

    return make_node(np.ascontiguousarray(out), parents, bw, "depthwise_conv2d")


def pool_max2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties route the gradient to the first
    row-major position of the window."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"pool_max2 needs even spatial dims, got {h}x{w}")
    # window members in row-major order
    views = [x.data[:, :, i::2, j::2] for i in (0, 1) for j in (0, 1)]
    out = np.maximum(np.maximum(views[0], views[1]), np.maximum(views[2], views[3]))
    taken = np.zeros(out.shape, dtype=bool)
    masks = []
    for v in views:
        m = (v == out) & ~taken
        taken |= m
        masks.append(m)

    def bw(g):
        gx = np.zeros((n, c, h, w), dtype=g.dtype)
        for (i, j), m in zip(((0, 0), (0, 1), (1, 0), (1, 1)), masks):
            gx[:, :, i::2, j::2] = g * m
        return (gx,)

    return make_node(out, (x,), bw, "pool_max2")


def upsample_nearest2(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return make_node(out, (x,), bw, "upsample_nearest2")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "log":
        return log(x)
    raise ValueError(f"unknown activation {kind!r}")


def channel_stats(x: Tensor, epsilon: float = 1e-5) -> tuple[Tensor, Tensor]:
    """Per-(sample, channel) spatial mean and sqrt(population var + eps)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"channel_stats expects NCHW, got {x.shape}")
    if x.shape[2] * x.shape[3] < 1:
        raise DimensionError("channel_stats needs at least one spatial element")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    mu = mean(x, axis=(2, 3))
    centered = sub(x, reshape(mu, mu.shape + (1, 1)))
    var = mean(mul(centered, centered), axis=(2, 3))
    return mu, sqrt(var + epsilon)


def affine_channels(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """out[n,c,h,w] = x[n,c,h,w] * scale[n,c] + shift[n,c]."""
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    if x.ndim != 4 or scale.shape != x.shape[:2] or shift.shape != x.shape[:2]:
        raise DimensionError(f"affine_channels: x {x.shape}, scale {scale.shape}, shift {shift.shape}")
    return reshape(scale, scale.shape + (1, 1)) * x + reshape(shift, shift.shape + (1, 1))


def _root(s: Tensor) -> Tensor:
    """sqrt with the zero subgradient at 0, so a zero distance stays exactly
    zero and its gradient is 0 instead of 0/0."""
    out = np.sqrt(s.data)
    safe = np.where(out > 0, out, 1.0)
    return make_node(out, (s,), lambda g: (np.where(out > 0, 0.5 * g / safe, 0.0),), "root")


def l2_distance(a: Tensor, b: Tensor, stabilizer: float = 0.0) -> Tensor:
    """sqrt(sum((a - b)^2) + stabilizer) as a scalar tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"l2_distance: {a.shape} vs {b.shape}")
    d = sub(a, b)
    return _root(tsum(mul(d, d)) + stabilizer)


def batch_l2_distance(a: Tensor, b: Tensor, stabilizer: float = 0.0) -> Tensor:
    """Mean over the leading (batch) axis of per-sample L2 distances."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"batch_l2_distance: {a.shape} vs {b.shape}")
    d = sub(a, b)
    return mean(_root(tsum(mul(d, d), axis=tuple(range(1, a.ndim))) + stabilizer))


def global_avg_pool(x: Tensor) -> Tensor:
    return mean(x, axis=(2, 3))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x (N, I) @ weight (I, O) + bias (O,)."""
    out = as_tensor(x) @ as_tensor(weight)
    return out + bias if bias is not None else out


def log_softmax(logits: Tensor) -> Tensor:
    logits = as_tensor(logits)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return make_node(out, (logits,), bw, "log_softmax")


def softmax(logits: Tensor) -> Tensor:
    logits = as_tensor(logits)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return make_node(out, (logits,), bw, "softmax")


def cross_entropy(logits: Tensor, labels: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits``.

    Optional per-sample ``weights`` give a weighted mean (normalised by their sum).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape}, labels {labels.shape}")
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(labels.size), labels] = 1.0
    if weights is None:
        return -mean(tsum(mul(log_softmax(logits), onehot), axis=1))
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != labels.shape or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("cross_entropy weights must be non-negative, one per sample, with positive sum")
    onehot *= (w / w.sum())[:, None].astype(logits.dtype)
    return -tsum(mul(log_softmax(logits), onehot))


def clamp_probability(p: Tensor, eps: float) -> Tensor:
    """Clamp into [eps, 1 - eps]; values outside [0, 1] are an error."""
    from .tensor import clamp

    p = as_tensor(p)
    if np.any(p.data < 0) or np.any(p.data > 1):
        raise NumericError("probability outside [0, 1]")
    return clamp(p, eps, 1.0 - eps)
