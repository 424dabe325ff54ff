"""Image watermark codec: residual encoder + convolutional decoder.

The encoder sees the cover image with the l-bit message tiled into l
constant feature planes (+1 for a set bit, -1 for a clear bit), runs four
3x3 convolutions, and emits a residual that is added to the cover and
clipped to [0, 1].  The residual is capped at a fixed per-image RMS so
image fidelity cannot be traded away during training.  The final encoder
conv is zero-initialized so an untrained encoder is an exact identity.
The decoder is seven 3x3 convolutions, global average pooling, and an
affine head producing one logit per bit; bits are read off as logit > 0.

Training is staged: train_codec first installs an analytic band-modulation
codec (orthonormal pixel-alternation kernels analyze the cover, message
bits gate those channels through the relu, a matched synthesis conv emits
the residual, and the decoder head is calibrated by least squares), then
fine-tunes everything jointly with Adam on mse(watermarked, cover) +
w * bce(logits, message).  The affine head is kept at its exact
least-squares optimum by periodic refits instead of SGD steps.  Only the
decoder is needed at scene-embedding time, and it stays frozen there.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from . import nn


@dataclass
class CodecConfig:
    message_len: int = 16
    image_size: int = 64
    channels: int = 16
    epochs: int = 50
    batch_size: int = 8
    corpus_size: int = 512
    lr: float = 1e-3             # decoder Adam lr
    encoder_lr: float = 1e-4     # gentler: preserves the analytic start
    lr_decay: float = 0.85       # per-epoch factor once decay starts
    lr_decay_start: int = 10     # epochs at full lr before decaying
    loss_weight: float = 1.0     # weight on the message BCE term
    residual_cap: float = 0.030  # max per-image residual RMS (PSNR floor ~30.5 dB)
    gate_mult: float = 2.0       # message gate, in units of cover band RMS
    target_residual: float = 0.029
    encoder_freeze_epochs: int = 6  # decoder-only epochs against the fixed carrier
    refit_sample: int = 192      # images per head recalibration
    holdout_frac: float = 0.125
    target_ber: float = 0.008    # early stop once held-out BER reaches this
    divergence_loss: float = 1e3
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.message_len <= MAX_MESSAGE_LEN:
            raise ValueError(f"message_len must be in [1, {MAX_MESSAGE_LEN}]")
        if self.channels < self.message_len:
            raise ValueError("channels must be >= message_len (one pooled "
                             "feature per bit at minimum)")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")
        if not 0.0 < self.holdout_frac < 1.0:
            raise ValueError("holdout_frac must be in (0, 1)")


@dataclass
class Codec:
    encoder: nn.Network
    decoder: nn.Network
    message_len: int
    channels: int
    image_size: int
    residual_cap: float = 0.028


def build_codec(message_len, channels=16, image_size=64, seed=0,
                dtype=np.float32, residual_cap=0.028) -> Codec:
    l, ch = message_len, channels
    enc_specs = [
        nn.LayerSpec("message_concat", message_len=l),
        nn.LayerSpec("conv3x3", 3 + l, ch), nn.LayerSpec("relu"),
        nn.LayerSpec("conv3x3", ch, ch), nn.LayerSpec("relu"),
        nn.LayerSpec("conv3x3", ch, ch), nn.LayerSpec("relu"),
        nn.LayerSpec("conv3x3", ch, 3),
    ]
    dec_specs = [
        nn.LayerSpec("conv3x3", 3, ch), nn.LayerSpec("relu"),
        nn.LayerSpec("conv3x3", ch, ch), nn.LayerSpec("relu"),
        nn.LayerSpec("conv3x3", ch, ch), nn.LayerSpec("relu"),
        nn.LayerSpec("conv3x3", ch, ch), nn.LayerSpec("relu"),
        nn.LayerSpec("conv3x3", ch, ch), nn.LayerSpec("relu"),
        nn.LayerSpec("conv3x3", ch, ch), nn.LayerSpec("relu"),
        nn.LayerSpec("conv3x3", ch, ch), nn.LayerSpec("relu"),
        nn.LayerSpec("global_avg_pool"),
        nn.LayerSpec("affine", ch, l),
    ]
    encoder = nn.init_network(enc_specs, seed=seed, zero_init_last=True, dtype=dtype)
    decoder = nn.init_network(dec_specs, seed=seed + 1, dtype=dtype)
    return Codec(encoder=encoder, decoder=decoder, message_len=l,
                 channels=channels, image_size=image_size,
                 residual_cap=residual_cap)


def _check_batch_messages(codec, messages):
    m = np.asarray(messages, dtype=float)
    if m.ndim == 1:
        m = m[None]
    if m.ndim != 2 or m.shape[1] != codec.message_len:
        raise ValueError(f"messages must be (B, {codec.message_len}), got {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("message entries must be exactly 0 or 1")
    return m


def encode_batch(codec: Codec, images, messages):
    """Watermark a (B,H,W,3) stack in [0,1]; returns (watermarked, cache).

    ``messages`` is (B,l) or a single (l,) message for the whole batch,
    bits in {0,1}.  The cache carries what encode_batch_backward needs.
    """
    images = np.asarray(images, dtype=codec.encoder.dtype)
    if images.ndim != 4 or images.shape[3] != 3:
        raise ValueError(f"expected (B,H,W,3) images, got {images.shape}")
    if images.shape[1:3] != (codec.image_size, codec.image_size):
        raise ValueError(
            f"images are {images.shape[1]}x{images.shape[2]}, codec encodes at "
            f"{codec.image_size}x{codec.image_size}")
    m = _check_batch_messages(codec, messages)
    x = images.transpose(0, 3, 1, 2)
    residual, tape = nn.forward(codec.encoder, x, message=2.0 * m - 1.0)
    # Per-image RMS cap: fidelity cannot be traded below the cap's PSNR.
    rms = np.sqrt((residual ** 2).mean(axis=(1, 2, 3), keepdims=True))
    scale = np.minimum(1.0, codec.residual_cap / (rms + 1e-12)).astype(x.dtype)
    raw = x + residual * scale
    out = np.clip(raw, 0.0, 1.0)
    gate = ((raw >= 0.0) & (raw <= 1.0)).astype(x.dtype)
    return out.transpose(0, 2, 3, 1), (tape, gate, scale)


def encode_batch_backward(codec: Codec, cache, d_watermarked):
    """Gradients of encode_batch w.r.t. encoder weights and the cover images.

    The cap scale is treated as a constant (its radial term renormalizes
    away on the next forward), so d_residual = scale * gated upstream.
    """
    tape, gate, scale = cache
    up = np.asarray(d_watermarked, dtype=gate.dtype).transpose(0, 3, 1, 2) * gate
    weight_grads, d_input = nn.backward(codec.encoder, tape, up * scale)
    #  The cover enters twice: through the net and through the residual add.
    return weight_grads, (d_input + up).transpose(0, 2, 3, 1)


def decode_batch(codec: Codec, images):
    """Decode a (B,H,W,3) stack to ((B,l) logits, tape)."""
    images = np.asarray(images, dtype=codec.decoder.dtype)
    if images.ndim != 4 or images.shape[3] != 3:
        raise ValueError(f"expected (B,H,W,3) images, got {images.shape}")
    logits, tape = nn.forward(codec.decoder, images.transpose(0, 3, 1, 2))
    return logits, tape


def decode_batch_backward(codec: Codec, tape, d_logits):
    """Gradients of decode_batch: (decoder weight grads, d_images (B,H,W,3))."""
    weight_grads, d_input = nn.backward(codec.decoder, tape, np.asarray(d_logits))
    return weight_grads, d_input.transpose(0, 2, 3, 1)


def encode_image(codec: Codec, image, message):
    """Single-image encode_batch; returns (watermarked HxWx3, cache)."""
    image = np.asarray(image, dtype=codec.encoder.dtype)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {image.shape}")
    out, cache = encode_batch(codec, image[None], np.asarray(message).reshape(1, -1))
    return out[0], cache


def encode_backward(codec: Codec, cache, d_watermarked):
    """Gradients of encode_image w.r.t. encoder weights and the cover image."""
    weight_grads, d_covers = encode_batch_backward(
        codec, cache, np.asarray(d_watermarked)[None])
    return weight_grads, d_covers[0]


def decode_image(codec: Codec, image):
    """Decode an HxWx3 image to (logits, tape)."""
    image = np.asarray(image, dtype=codec.decoder.dtype)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {image.shape}")
    logits, tape = decode_batch(codec, image[None])
    return logits[0], tape


def decode_backward(codec: Codec, tape, d_logits):
    """Gradients of decode_image: (decoder weight grads, d_image HxWx3)."""
    weight_grads, d_images = decode_batch_backward(
        codec, tape, np.asarray(d_logits)[None])
    return weight_grads, d_images[0]


def decode_bits(codec: Codec, image):
    """Hard bit readout: logit > 0."""
    logits, _ = decode_image(codec, image)
    return (logits > 0).astype(np.int64)


def random_message(length, rng):
    return rng.integers(0, 2, size=length).astype(np.int64)


MAX_MESSAGE_LEN = 64


def validate_message(bits):
    """Check an l-bit message: l in [1, 64], entries exactly 0 or 1."""
    bits = np.asarray(bits)
    if bits.ndim != 1 or not 1 <= bits.size <= MAX_MESSAGE_LEN:
        raise ValueError(f"message must be a 1..{MAX_MESSAGE_LEN}-bit vector, got shape {bits.shape}")
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("message entries must be exactly 0 or 1")
    return bits.astype(np.int64)


def parse_message(text, length):
    """Parse a message from a 0/1 string or hex (``0x...`` or ``hex:...``)."""
    text = text.strip()
    if text.startswith(("0x", "0X", "hex:")):
        digits = text.split(":", 1)[1] if text.startswith("hex:") else text[2:]
        value = int(digits, 16)
        if value >= 1 << length:
            raise ValueError(f"hex message {text!r} does not fit in {length} bits")
        bits = [(value >> (length - 1 - i)) & 1 for i in range(length)]
        return validate_message(np.array(bits))
    if set(text) <= {"0", "1"}:
        if len(text) != length:
            raise ValueError(f"binary message has {len(text)} bits, expected {length}")
        return validate_message(np.array([int(c) for c in text]))
    raise ValueError(f"cannot parse message {text!r}: use 0/1 digits or 0x hex")


def message_to_hex(bits):
    """Inverse of the hex form accepted by parse_message (MSB first)."""
    bits = validate_message(bits)
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return f"0x{value:0{(bits.size + 3) // 4}x}"


# --- procedural training corpus -------------------------------------------

CORPUS_VERSION = 4

# Every corpus image carries the SAME noise field at this amplitude: a
# fixed carrier whose band content the decoder can calibrate against.
# Fresh noise per image would make the carrier level fluctuate, and that
# fluctuation, not the message, would dominate the decoder's features.
# The watermark rides on band energy multiplicatively, so per-bit signal
# grows with carrier amplitude while the cover-to-cover spread does not.
CORPUS_DITHER = 0.10

# Images are squeezed into [margin, 1-margin] before the carrier is added
# so the final clip almost never bites (clipping attenuates the carrier
# in saturated regions, channel-unevenly).
CORPUS_MARGIN = 0.24


def _gradient_image(size, rng):
    a, b = rng.uniform(0, 1, size=(2, 3))
    angle = rng.uniform(0, 2 * np.pi)
    y, x = np.mgrid[0:size, 0:size] / (size - 1)
    t = (x * np.cos(angle) + y * np.sin(angle) + 1) / 2
    return a[None, None] * (1 - t[..., None]) + b[None, None] * t[..., None]


def _shapes_image(size, rng):
    img = np.full((size, size, 3), rng.uniform(0, 1, size=3))
    y, x = np.mgrid[0:size, 0:size]
    for _ in range(rng.integers(3, 8)):
        color = rng.uniform(0, 1, size=3)
        cx, cy = rng.uniform(0, size, size=2)
        r = rng.uniform(size * 0.05, size * 0.35)
        if rng.random() < 0.5:
            mask = (x - cx) ** 2 + (y - cy) ** 2 < r**2
        else:
            mask = (np.abs(x - cx) < r) & (np.abs(y - cy) < r)
        img[mask] = color
    # soften edges: hard steps would swamp the watermark band
    return gaussian_filter(img, (1.2, 1.2, 0))


def _noise_image(size, rng):
    # smooth blotches: bilinear blow-up of a coarse grid, low-passed
    coarse = rng.uniform(0, 1, size=(size // 8 + 1, size // 8 + 1, 3))
    img = zoom(coarse, (size / coarse.shape[0], size / coarse.shape[1], 1),
               order=1)[:size, :size]
    return np.clip(gaussian_filter(img, (1.0, 1.0, 0)), 0, 1)


def make_corpus(n_images, size, seed, dither=CORPUS_DITHER, margin=CORPUS_MARGIN):
    """n procedural RGB textures in [0,1], (n, size, size, 3)."""
    rng = np.random.default_rng(seed)
    pattern = rng.standard_normal((size, size, 3))
    makers = (_gradient_image, _shapes_image, _noise_image)
    imgs = np.stack([makers[i % 3](size, rng) for i in range(n_images)])
    imgs = margin + (1.0 - 2.0 * margin) * imgs + dither * pattern
    return np.clip(imgs, 0, 1)


# --- analytic warm start ----------------------------------------------------

_CALIB_LOGIT = 2.5   # target logit magnitude for least-squares head fits


def _alternation_bank(ch, rng):
    """ch unit-norm zero-mean 3x3x3 kernels at the pixel-alternation band.

    Orthonormal while ch <= 27 (the kernel dof); beyond that, unit-norm
    random members of the band with small mutual coherence.
    """
    alt = np.fromfunction(lambda i, j: (-1.0) ** (i + j), (3, 3))
    raw = rng.standard_normal((ch, 3, 3, 3)) * alt
    raw -= raw.mean(axis=(2, 3), keepdims=True)
    flat = raw.reshape(ch, -1)
    if ch <= 27:
        q, _ = np.linalg.qr(flat.T)
        flat = q.T.copy()
    else:
        flat /= np.linalg.norm(flat, axis=1, keepdims=True)
    return flat.reshape(ch, 3, 3, 3)


def _refit_head(codec: Codec, images, messages):
    """Exact least-squares recalibration of the decoder's affine readout."""
    zs = []
    for start in range(0, len(images), 64):
        wm, _ = encode_batch(codec, images[start:start + 64],
                             messages[start:start + 64])
        _, tape = decode_batch(codec, wm)
        zs.append(tape.caches[-1][1])   # pooled features feeding the head
    z = np.concatenate(zs).astype(np.float64)
    a = np.concatenate([z, np.ones((len(z), 1))], axis=1)
    targets = _CALIB_LOGIT * (2.0 * np.asarray(messages, dtype=np.float64) - 1.0)
    coef, *_ = np.linalg.lstsq(a, targets, rcond=None)
    dt = codec.decoder.weights[-1][0].dtype
    codec.decoder.weights[-1] = (
        np.ascontiguousarray(coef[:-1].T).astype(dt), coef[-1].astype(dt))


def _warm_start(codec: Codec, train_images, config: CodecConfig, rng):
    """Install the analytic band-modulation codec as the training start.

    Encoder: conv1 analyzes the cover with the alternation bank and adds
    a +-gate per message bit at each channel's center tap; the relu then
    keys each channel on or off; conv2/3 pass through; conv4 synthesizes
    the residual with the matched (flipped) bank.  Channels beyond the
    message length act as always-on / always-off references.  Decoder:
    conv1 is the same bank, convs 2..7 pass through, and the affine head
    is calibrated by least squares.
    """
    l, ch = codec.message_len, codec.channels
    dt = codec.encoder.dtype
    bank = _alternation_bank(ch, rng)
    synth = np.ascontiguousarray(np.transpose(bank[:, :, ::-1, ::-1], (1, 0, 2, 3)))

    sample = np.asarray(train_images[:min(len(train_images), 256)], dtype=np.float64)
    x = sample.transpose(0, 3, 1, 2)
    u, _ = nn._conv3x3(x, bank, np.zeros(ch))
    s = config.gate_mult * float(np.sqrt((u ** 2).mean()))
    msgs = rng.integers(0, 2, size=(len(sample), l)).astype(np.float64)
    gate = np.zeros((len(sample), ch, 1, 1))
    gate[:, :l, 0, 0] = s * (2 * msgs - 1)
    if ch > l:
        gate[:, l, 0, 0] = s
    resid, _ = nn._conv3x3(np.maximum(u + gate, 0.0), synth, np.zeros(3))
    delta = config.target_residual / float(np.sqrt((resid ** 2).mean()) + 1e-12)

    w1 = np.zeros((ch, 3 + l, 3, 3))
    w1[:, :3] = bank
    w1[np.arange(l), 3 + np.arange(l), 1, 1] = s
    b1 = np.zeros(ch)
    if ch > l:
        b1[l] = s                      # always-on reference channel
    ident = np.zeros((ch, ch, 3, 3))
    ident[np.arange(ch), np.arange(ch), 1, 1] = 1.0
    enc, dec = codec.encoder, codec.decoder
    enc.weights[1] = (w1.astype(dt), b1.astype(dt))
    enc.weights[3] = (ident.astype(dt), np.zeros(ch, dtype=dt))
    enc.weights[5] = (ident.astype(dt), np.zeros(ch, dtype=dt))
    enc.weights[7] = ((delta * synth).astype(dt), np.zeros(3, dtype=dt))
    dec.weights[0] = (bank.astype(dt), np.zeros(ch, dtype=dt))
    for i in (2, 4, 6, 8, 10, 12):
        dec.weights[i] = (ident.astype(dt), np.zeros(ch, dtype=dt))
    _refit_head(codec, sample.astype(dt), msgs)


# --- joint training --------------------------------------------------------

class CodecDivergence(RuntimeError):
    """Training loss blew up; carries the epoch index."""

    def __init__(self, epoch, loss):
        super().__init__(f"codec training diverged at epoch {epoch}: loss={loss:.3e}")
        self.epoch = epoch


@dataclass
class TrainReport:
    epochs_run: int
    final_mse: float
    final_bce: float
    holdout_ber: float
    holdout_psnr: float = float("nan")
    history: list = field(default_factory=list)


def _holdout_eval(codec, images, rng, batch=32):
    """(mean BER, mean encoder PSNR) over held-out images, fresh messages."""
    from .metrics import psnr

    errs, psnrs = [], []
    for start in range(0, len(images), batch):
        chunk = images[start:start + batch]
        msgs = rng.integers(0, 2, size=(len(chunk), codec.message_len))
        wm, _ = encode_batch(codec, chunk, msgs.astype(float))
        logits, _ = decode_batch(codec, wm)
        errs.append(np.mean((logits > 0).astype(int) != msgs))
        psnrs.extend(psnr(w, c) for w, c in zip(wm, chunk))
    return float(np.mean(errs)), float(np.mean(psnrs))


MIN_CORPUS = 64


def train_codec(config: CodecConfig, corpus=None, log=None):
    """Train encoder+decoder jointly; returns (codec, TrainReport).

    ``corpus`` defaults to the procedural one sized by the config.
    Per-epoch key=value lines go through ``log`` when given.  Raises
    CodecDivergence if the loss explodes.  Deterministic for a fixed
    config and corpus.
    """
    # float32 compute: training is memory-bandwidth-bound and the weight
    # file format is float32 anyway.
    codec = build_codec(config.message_len, config.channels,
                        config.image_size, seed=config.seed, dtype=np.float32,
                        residual_cap=config.residual_cap)
    if corpus is None:
        corpus = make_corpus(config.corpus_size, config.image_size, config.seed + 10)
    if len(corpus) < MIN_CORPUS:
        raise ValueError(f"corpus of {len(corpus)} images is too small, need >= {MIN_CORPUS}")
    corpus = np.asarray(corpus, dtype=np.float32)
    n_hold = max(1, int(round(len(corpus) * config.holdout_frac)))
    holdout, train = corpus[:n_hold], corpus[n_hold:]
    rng = np.random.default_rng(config.seed + 20)
    # With no message term there is nothing to warm start; pure mse training
    # from random init shrinks the residual and leaves decoding at chance.
    staged = config.loss_weight > 0
    if staged:
        _warm_start(codec, train, config, np.random.default_rng(config.seed + 40))
    history = []
    mse_v = bce_v = hold = hold_psnr = float("nan")
    epochs_run = 0
    half = max(1, config.batch_size // 2)
    for epoch in range(config.epochs):
        decay = config.lr_decay ** max(0, epoch - config.lr_decay_start)
        # Early epochs train the decoder against the warm-started encoder
        # as a fixed transmitter; a moving carrier destabilizes them.
        enc_frozen = staged and epoch < config.encoder_freeze_epochs
        order = rng.permutation(len(train))
        mse_sum = bce_sum = 0.0
        n_batches = 0
        for start in range(0, len(train), half):
            idx = order[start:start + half]
            # complement pairs: each cover carries m and 1-m in one batch,
            # so the message signal is contrastive, not cover-dependent
            imgs = np.concatenate([train[idx], train[idx]])
            m0 = rng.integers(0, 2, size=(len(idx), config.message_len)).astype(float)
            msgs = np.concatenate([m0, 1.0 - m0])
            wm, enc_cache = encode_batch(codec, imgs, msgs)
            logits, dec_tape = decode_batch(codec, wm)
            mse_l, d_wm_mse = nn.mse_loss(wm, imgs)
            bce_l, d_logits = nn.bce_loss(logits, msgs)
            dec_grads, d_wm_dec = decode_batch_backward(
                codec, dec_tape, config.loss_weight * d_logits)
            if staged:
                dec_grads[-1] = None   # head moves only via exact refits
            if not enc_frozen:
                enc_grads, _ = encode_batch_backward(codec, enc_cache,
                                                     d_wm_mse + d_wm_dec)
                nn.network_adam_step(codec.encoder, enc_grads,
                                     decay * config.encoder_lr)
            nn.network_adam_step(codec.decoder, dec_grads, decay * config.lr)
            mse_sum += mse_l
            bce_sum += bce_l
            n_batches += 1
        mse_v, bce_v = mse_sum / n_batches, bce_sum / n_batches
        loss = mse_v + config.loss_weight * bce_v
        if not np.isfinite(loss) or loss > config.divergence_loss:
            raise CodecDivergence(epoch, loss)
        if staged:
            ridx = rng.choice(len(train), min(config.refit_sample, len(train)),
                              replace=False)
            rmsgs = rng.integers(0, 2, size=(len(ridx), config.message_len)).astype(float)
            _refit_head(codec, train[ridx], rmsgs)
        hold, hold_psnr = _holdout_eval(codec, holdout,
                                        np.random.default_rng(config.seed + 30))
        history.append({"epoch": epoch, "mse": mse_v, "bce": bce_v,
                        "holdout_ber": hold, "holdout_psnr": hold_psnr})
        if log is not None:
            log(f"epoch={epoch} mse={mse_v:.6f} bce={bce_v:.6f} "
                f"holdout_ber={hold:.4f} holdout_psnr={hold_psnr:.2f}")
        epochs_run = epoch + 1
        if hold <= config.target_ber:
            break
    return codec, TrainReport(epochs_run=epochs_run, final_mse=mse_v,
                              final_bce=bce_v, holdout_ber=hold,
                              holdout_psnr=hold_psnr, history=history)


# --- serialization ---------------------------------------------------------

CODEC_MAGIC = b"SMCD"
CODEC_VERSION = 2


def save_codec(path, codec: Codec):
    with open(path, "wb") as f:
        f.write(CODEC_MAGIC)
        f.write(struct.pack("<B3If", CODEC_VERSION, codec.message_len,
                            codec.channels, codec.image_size, codec.residual_cap))
        nn.save_network(f, codec.encoder)
        nn.save_network(f, codec.decoder)


def load_codec(path) -> Codec:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CODEC_MAGIC:
            raise nn.WeightFileError(f"bad codec magic {magic!r}, expected {CODEC_MAGIC!r}")
        header = f.read(struct.calcsize("<B3If"))
        if len(header) != struct.calcsize("<B3If"):
            raise nn.WeightFileError("truncated codec header")
        version, l, ch, size, cap = struct.unpack("<B3If", header)
        if version != CODEC_VERSION:
            raise nn.WeightFileError(
                f"codec file version {version}, this build reads {CODEC_VERSION}")
        # The file stores float32, so this cast is value-exact.
        encoder = nn.load_network(f).astype(np.float32)
        decoder = nn.load_network(f).astype(np.float32)
    return Codec(encoder=encoder, decoder=decoder, message_len=l,
                 channels=ch, image_size=size, residual_cap=float(cap))
