"""Train a small watermark codec from scratch and poke at the result.

The codec is a pair of tiny convnets: the encoder takes a cover image
plus an l-bit message and emits a low-amplitude residual; the decoder
takes any image and emits l logits.  Training minimizes image MSE plus
the decoding BCE on a procedural texture corpus, so the two nets agree
on a modulation scheme that survives the residual amplitude cap.

This runs a scaled-down config (8 bits, 32x32, ~1 minute on one core).
"""

import tempfile
import time

import numpy as np

from splatmark import codec

cfg = codec.CodecConfig(
    message_len=8,
    channels=10,
    image_size=32,
    corpus_size=192,
    epochs=10,
    target_ber=0.0,      # run all epochs; the desk config stops at 0.8%
    seed=0,
)

print(f"training: {cfg.message_len} bits, {cfg.image_size}x{cfg.image_size} "
      f"images, {cfg.corpus_size}-image corpus, {cfg.epochs} epochs")
t0 = time.time()
trained, report = codec.train_codec(cfg, log=lambda line: print("  " + line))
print(f"done in {time.time() - t0:.0f}s: held-out ber={report.holdout_ber:.4f} "
      f"encoder psnr={report.holdout_psnr:.2f} dB")

# Encode one held-out image with a known message and read it back.
corpus = codec.make_corpus(cfg.corpus_size, cfg.image_size, cfg.seed + 10)
cover = corpus[0]
message = codec.random_message(cfg.message_len, np.random.default_rng(7))
marked, _ = codec.encode_image(trained, cover, message)

from splatmark.metrics import psnr  # noqa: E402

print()
print(f"message        : {''.join(str(b) for b in message)} "
      f"({codec.message_to_hex(message)})")
print(f"residual rms   : {np.sqrt(np.mean((marked - cover) ** 2)):.4f} "
      f"(cap {trained.residual_cap})")
print(f"marked psnr    : {psnr(marked, cover):.2f} dB")

decoded = codec.decode_bits(trained, marked)
print(f"decoded        : {''.join(str(b) for b in decoded)} "
      f"(ber {np.mean(decoded != message):.3f})")
unmarked = codec.decode_bits(trained, cover)
print(f"cover decodes  : {''.join(str(b) for b in unmarked)} "
      f"(no embedded message, so this is noise)")

# The codec serializes to a single binary file.
with tempfile.NamedTemporaryFile(suffix=".bin") as f:
    codec.save_codec(f.name, trained)
    loaded = codec.load_codec(f.name)
    again = codec.decode_bits(loaded, marked)
    assert np.array_equal(again, decoded)
    print(f"round-tripped through {f.name}: decode identical")
