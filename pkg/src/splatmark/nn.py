"""Minimal reverse-mode network engine for the watermark codec.

Supports exactly the layer set the codec needs: 3x3 stride-1 same-padding
convolutions, ReLU, sigmoid, global average pooling, affine heads, and a
message-concat layer that tiles an l-bit message into l constant feature
planes.  Activations flow as (N, C, H, W) float arrays; the pooling layer
collapses to (N, C) and the affine head maps (N, C) -> (N, out).

``forward`` records per-layer inputs on a tape; ``backward`` replays the
tape to produce exact gradients for every weight and for the network
input (the input gradient is what lets decoder losses reach the
renderer).  Weight files are little-endian binary with a versioned
header; round-trips are bit-exact.

Adam here is the standard bias-corrected update; ``AdamState`` instances
are also used by the scene optimizers.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

WEIGHTS_MAGIC = b"SMNW"
WEIGHTS_VERSION = 1

LAYER_KINDS = ("conv3x3", "relu", "sigmoid", "global_avg_pool", "affine", "message_concat")


class WeightFileError(ValueError):
    """Malformed, truncated, or wrong-version weight file."""


@dataclass
class LayerSpec:
    """One layer: kind plus the channel counts it maps between.

    conv3x3 and affine use (in_channels -> out_channels); message_concat
    appends ``message_len`` constant planes; the rest are shape-preserving
    (pooling collapses spatial dims).
    """

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    message_len: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass
class Network:
    """Layer specs plus their weights and Adam moment buffers."""

    specs: list
    weights: list   # per layer: (W, b) or None
    adam_m: list = field(default_factory=list)
    adam_v: list = field(default_factory=list)
    adam_t: int = 0

    def __post_init__(self):
        if not self.adam_m:
            self.adam_m = [
                None if wb is None else tuple(np.zeros_like(a) for a in wb)
                for wb in self.weights
            ]
        if not self.adam_v:
            self.adam_v = [
                None if wb is None else tuple(np.zeros_like(a) for a in wb)
                for wb in self.weights
            ]

    @property
    def dtype(self):
        for wb in self.weights:
            if wb is not None:
                return wb[0].dtype
        return np.dtype(float)

    def astype(self, dtype) -> "Network":
        """Copy with weights and moments cast; float32 speeds training 2x."""
        cast = lambda wb: None if wb is None else tuple(a.astype(dtype) for a in wb)
        return Network(specs=list(self.specs),
                       weights=[cast(wb) for wb in self.weights],
                       adam_m=[cast(wb) for wb in self.adam_m],
                       adam_v=[cast(wb) for wb in self.adam_v],
                       adam_t=self.adam_t)

    def output_channels(self, input_channels: int) -> int:
        c = input_channels
        for spec in self.specs:
            if spec.kind == "message_concat":
                c = c + spec.message_len
            elif spec.kind in ("conv3x3", "affine"):
                c = spec.out_channels
        return c


def init_network(specs, seed=0, zero_init_last=False, dtype=float) -> Network:
    """Kaiming-uniform fan-in init for conv/affine weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights = []
    weighted = [i for i, s in enumerate(specs) if s.kind in ("conv3x3", "affine")]
    last_weighted = weighted[-1] if weighted else -1
    for i, spec in enumerate(specs):
        if spec.kind == "conv3x3":
            fan_in = spec.in_channels * 9
            bound = math.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(spec.out_channels, spec.in_channels, 3, 3))
            b = np.zeros(spec.out_channels)
        elif spec.kind == "affine":
            fan_in = spec.in_channels
            bound = math.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(spec.out_channels, spec.in_channels))
            b = np.zeros(spec.out_channels)
        else:
            weights.append(None)
            continue
        if zero_init_last and i == last_weighted:
            w = np.zeros_like(w)
        weights.append((w.astype(dtype), b.astype(dtype)))
    return Network(specs=list(specs), weights=weights)


@dataclass
class Tape:
    """Recorded forward intermediates; owned by one (network, input) pair."""

    net: Network
    caches: list
    message: np.ndarray | None


def _reflect_pad(x):
    """Pad H and W by one pixel, mirroring across the border row/column.

    Reflect padding keeps borders statistically identical to the interior;
    zero padding would plant an artificial step edge around every frame,
    which pollutes global-average-pool statistics.  Columns are mirrored
    from the raw array, rows from the column-padded one, so the backward
    fold in _conv3x3_backward can undo the steps in reverse order.
    """
    n, c, h, wd = x.shape
    if h < 2 or wd < 2:
        raise ValueError(f"conv3x3 needs at least 2x2 spatial extent, got {h}x{wd}")
    xp = np.empty((n, c, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    xp[:, :, 1:-1, 0] = x[:, :, :, 1]
    xp[:, :, 1:-1, -1] = x[:, :, :, -2]
    xp[:, :, 0] = xp[:, :, 2]
    xp[:, :, -1] = xp[:, :, -3]
    return xp


def _im2col(x):
    """(n, c, h, w) -> patch matrix (n, c*9, h*w), reflect padding included.

    Built with nine plain slice copies (no transposes), so the result is
    contiguous and ready for a broadcasted GEMM against the (o, c*9)
    weight matrix.
    """
    n, c, h, wd = x.shape
    xp = _reflect_pad(x)
    cols = np.empty((n, c, 9, h, wd), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, ky * 3 + kx] = xp[:, :, ky:ky + h, kx:kx + wd]
    return cols.reshape(n, c * 9, h * wd)


def _conv3x3(x, w, b, cols=None):
    """Same-padding 3x3 convolution; returns (out, cols) for tape reuse."""
    n, c, h, wd = x.shape
    if cols is None:
        cols = _im2col(x)
    out = np.matmul(w.reshape(w.shape[0], c * 9), cols)  # (n, o, h*w)
    out += b[:, None]
    return out.reshape(n, w.shape[0], h, wd), cols


def _conv3x3_backward(cols, w, upstream):
    """Gradients of _conv3x3 given the forward's patch matrix: (dW, db, dx)."""
    n, co, h, wd = upstream.shape
    c = w.shape[1]
    up = upstream.reshape(n, co, h * wd)
    dw = np.tensordot(up, cols, axes=([0, 2], [0, 2])).reshape(co, c, 3, 3)
    db = up.sum(axis=(0, 2))
    # dx: first the gradient w.r.t. the padded buffer - a full correlation
    # with the kernel flipped in space and channels swapped - computed as a
    # same-size conv over the zero-extended upstream.
    w_rot = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    up_ext = np.zeros((n, co, h + 4, wd + 4), dtype=upstream.dtype)
    up_ext[:, :, 2:-2, 2:-2] = upstream
    d_pad_cols = np.empty((n, co, 9, h + 2, wd + 2), dtype=upstream.dtype)
    for ky in range(3):
        for kx in range(3):
            d_pad_cols[:, :, ky * 3 + kx] = up_ext[:, :, ky:ky + h + 2, kx:kx + wd + 2]
    d_pad = np.matmul(
        w_rot.reshape(c, co * 9),
        d_pad_cols.reshape(n, co * 9, (h + 2) * (wd + 2)),
    ).reshape(n, c, h + 2, wd + 2)
    # Fold the reflect-padding rows/columns back, reversing _reflect_pad.
    d_pad[:, :, 2] += d_pad[:, :, 0]
    d_pad[:, :, -3] += d_pad[:, :, -1]
    dx = d_pad[:, :, 1:-1, 1:-1].copy()
    dx[:, :, :, 1] += d_pad[:, :, 1:-1, 0]
    dx[:, :, :, -2] += d_pad[:, :, 1:-1, -1]
    return dw, db, dx


def forward(net: Network, x, message=None):
    """Run the network; returns (output, tape) for a later backward."""
    x = np.asarray(x, dtype=net.dtype)
    caches = []
    for spec, wb in zip(net.specs, net.weights):
        if spec.kind == "conv3x3":
            if x.ndim != 4 or x.shape[1] != spec.in_channels:
                raise ValueError(
                    f"conv3x3 expected (N, {spec.in_channels}, H, W), got {x.shape}"
                )
            x, cols = _conv3x3(x, wb[0], wb[1])
            caches.append(("conv3x3", cols))
        elif spec.kind == "relu":
            caches.append(("relu", x > 0))
            x = np.maximum(x, 0.0)
        elif spec.kind == "sigmoid":
            # Clip keeps exp in range for float32 inputs too.
            y = 1.0 / (1.0 + np.exp(-np.clip(x, -60, 60)))
            caches.append(("sigmoid", y))
            x = y
        elif spec.kind == "global_avg_pool":
            if x.ndim != 4:
                raise ValueError(f"global_avg_pool expected 4D input, got {x.shape}")
            caches.append(("global_avg_pool", x.shape))
            x = x.mean(axis=(2, 3))
        elif spec.kind == "affine":
            if x.ndim != 2 or x.shape[1] != spec.in_channels:
                raise ValueError(f"affine expected (N, {spec.in_channels}), got {x.shape}")
            caches.append(("affine", x))
            x = x @ wb[0].T + wb[1]
        elif spec.kind == "message_concat":
            if message is None:
                raise ValueError("message_concat layer requires a message")
            m = np.asarray(message, dtype=x.dtype)
            n, _, h, wd = x.shape
            if m.ndim == 1:
                m = np.broadcast_to(m, (n, m.size))
            if m.shape != (n, spec.message_len):
                raise ValueError(
                    f"message shape {m.shape} incompatible with batch {n}, "
                    f"message_len {spec.message_len}"
                )
            planes = np.broadcast_to(m[:, :, None, None], (n, spec.message_len, h, wd))
            caches.append(("message_concat", x.shape[1]))
            x = np.concatenate([x, planes], axis=1)
    return x, Tape(net=net, caches=caches, message=message)


def backward(net: Network, tape: Tape, upstream):
    """Exact gradients from a recorded forward.

    Returns (weight_grads, input_grad); weight_grads mirrors net.weights.
    """
    if tape.net is not net:
        raise ValueError("stale tape: it was recorded by a different network")
    if len(tape.caches) != len(net.specs):
        raise ValueError("stale tape: layer count mismatch")
    g = np.asarray(upstream, dtype=net.dtype)
    weight_grads = [None] * len(net.specs)
    for i in range(len(net.specs) - 1, -1, -1):
        spec = net.specs[i]
        kind, cache = tape.caches[i][0], tape.caches[i][1]
        if kind != spec.kind:
            raise ValueError("stale tape: layer kind mismatch")
        if spec.kind == "conv3x3":
            dw, db, g = _conv3x3_backward(cache, net.weights[i][0], g)
            weight_grads[i] = (dw, db)
        elif spec.kind == "relu":
            g = g * cache
        elif spec.kind == "sigmoid":
            g = g * cache * (1.0 - cache)
        elif spec.kind == "global_avg_pool":
            n, c, h, wd = cache
            g = np.broadcast_to(g[:, :, None, None], (n, c, h, wd)) / (h * wd)
            g = np.ascontiguousarray(g)
        elif spec.kind == "affine":
            weight_grads[i] = (g.T @ cache, g.sum(axis=0))
            g = g @ net.weights[i][0]
        elif spec.kind == "message_concat":
            g = g[:, :cache]
    return weight_grads, g


def adam_step(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; mutates m and v, returns new param."""
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad**2
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamState:
    """Adam moments for one parameter array."""

    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, param, grad, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.t += 1
        return adam_step(param, grad, self.m, self.v, self.t, lr, beta1, beta2, eps)


def network_adam_step(net: Network, weight_grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Adam update for every weighted layer of the network, in place."""
    net.adam_t += 1
    for i, grads in enumerate(weight_grads):
        if grads is None:
            continue
        w, b = net.weights[i]
        mw, mb = net.adam_m[i]
        vw, vb = net.adam_v[i]
        w = adam_step(w, grads[0], mw, vw, net.adam_t, lr, beta1, beta2, eps)
        b = adam_step(b, grads[1], mb, vb, net.adam_t, lr, beta1, beta2, eps)
        net.weights[i] = (w, b)


def bce_loss(logits, bits):
    """Mean binary cross-entropy from logits, with d(loss)/d(logits).

    Stable formulation: softplus(x) - x*bit per element, averaged.
    """
    logits = np.asarray(logits, dtype=float)
    bits = np.asarray(bits, dtype=float)
    if logits.shape != bits.shape:
        raise ValueError(f"logits shape {logits.shape} != bits shape {bits.shape}")
    loss = float(np.mean(np.logaddexp(0.0, logits) - logits * bits))
    probs = 1.0 / (1.0 + np.exp(-np.clip(logits, -60, 60)))
    grad = (probs - bits) / logits.size
    return loss, grad


def mse_loss(a, b):
    """Mean squared error and its gradient w.r.t. ``a``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


# --- weight file serialization -------------------------------------------

def _write_array(f, arr):
    arr32 = np.ascontiguousarray(arr, dtype="<f4")
    f.write(struct.pack("<I", arr32.ndim))
    f.write(struct.pack(f"<{arr32.ndim}I", *arr32.shape))
    f.write(arr32.tobytes())


def _read_exact(f, n):
    data = f.read(n)
    if len(data) != n:
        raise WeightFileError("truncated weight file")
    return data


def _read_array(f):
    (ndim,) = struct.unpack("<I", _read_exact(f, 4))
    if ndim > 8:
        raise WeightFileError(f"implausible array rank {ndim}")
    shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").reshape(shape)
    return data.astype(float)


def save_network(f, net: Network):
    """Write specs and float32 weights to a path or open binary file."""
    if not hasattr(f, "write"):
        with open(f, "wb") as fh:
            return save_network(fh, net)
    f.write(WEIGHTS_MAGIC)
    f.write(struct.pack("<I", WEIGHTS_VERSION))
    f.write(struct.pack("<I", len(net.specs)))
    for spec, wb in zip(net.specs, net.weights):
        kind = spec.kind.encode("ascii")
        f.write(struct.pack("<B", len(kind)))
        f.write(kind)
        f.write(struct.pack("<3i", spec.in_channels, spec.out_channels, spec.message_len))
        if wb is None:
            f.write(struct.pack("<B", 0))
        else:
            f.write(struct.pack("<B", 1))
            _write_array(f, wb[0])
            _write_array(f, wb[1])


def load_network(f) -> Network:
    """Read a network written by save_network; errors name the defect."""
    if not hasattr(f, "read"):
        with open(f, "rb") as fh:
            return load_network(fh)
    magic = f.read(4)
    if magic != WEIGHTS_MAGIC:
        raise WeightFileError(f"bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4))
    if version != WEIGHTS_VERSION:
        raise WeightFileError(
            f"unsupported weight file version {version}, this build reads {WEIGHTS_VERSION}"
        )
    (n_layers,) = struct.unpack("<I", _read_exact(f, 4))
    specs, weights = [], []
    for _ in range(n_layers):
        (klen,) = struct.unpack("<B", _read_exact(f, 1))
        kind = _read_exact(f, klen).decode("ascii")
        cin, cout, mlen = struct.unpack("<3i", _read_exact(f, 12))
        specs.append(LayerSpec(kind=kind, in_channels=cin, out_channels=cout, message_len=mlen))
        (has_w,) = struct.unpack("<B", _read_exact(f, 1))
        weights.append((_read_array(f), _read_array(f)) if has_w else None)
    return Network(specs=specs, weights=weights)
