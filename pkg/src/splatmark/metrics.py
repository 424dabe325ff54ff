"""Image and message quality metrics: BER, PSNR, SSIM (with gradient).

SSIM follows the classic single-scale formulation: 11x11 Gaussian window
with sigma 1.5, valid-mode filtering, C1 = (0.01*peak)^2 and
C2 = (0.03*peak)^2, averaged over channels.  Because SSIM sits inside the
embedding loss, its gradient w.r.t. the first image is computed
analytically (filter adjoints are full-mode convolutions with the same
symmetric window).
"""

from __future__ import annotations

import numpy as np
from scipy import signal

PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def ber(bits_a, bits_b) -> float:
    """Fraction of positions where the two bit strings differ."""
    a = np.asarray(bits_a).astype(int)
    b = np.asarray(bits_b).astype(int)
    if a.shape != b.shape:
        raise ValueError(f"bit-string length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty bit strings")
    return float(np.mean(a != b))


def psnr(a, b, peak=1.0) -> float:
    """10 log10(peak^2 / MSE) in dB, capped at 99 dB for tabulation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(peak**2 / mse), PSNR_CAP_DB))


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (r / sigma) ** 2)
    w /= w.sum()
    return np.outer(w, w)


_WINDOW = _gaussian_window()


def _filt(x, w):
    return signal.correlate(x, w, mode="valid")


def _filt_adjoint(g, w):
    # Adjoint of valid-mode correlation is full-mode convolution.
    return signal.convolve(g, w, mode="full")


def ssim(a, b, peak=1.0, window=None):
    """Mean SSIM over channels plus its gradient w.r.t. ``a``.

    Images are (H, W) or (H, W, C) with H, W >= the 11x11 window.
    Returns (value, grad) with grad shaped like ``a``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    w = _WINDOW if window is None else window
    if a.shape[0] < w.shape[0] or a.shape[1] < w.shape[1]:
        raise ValueError(f"image {a.shape[:2]} smaller than SSIM window {w.shape}")

    squeeze = a.ndim == 2
    if squeeze:
        a = a[:, :, None]
        b = b[:, :, None]

    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    channels = a.shape[2]
    values = []
    grad = np.zeros_like(a)
    for ch in range(channels):
        x, y = a[:, :, ch], b[:, :, ch]
        mx, my = _filt(x, w), _filt(y, w)
        mxx, myy, mxy = _filt(x * x, w), _filt(y * y, w), _filt(x * y, w)
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my

        a1 = 2 * mx * my + c1
        a2 = 2 * cxy + c2
        b1 = mx * mx + my * my + c1
        b2 = vx + vy + c2
        s = (a1 * a2) / (b1 * b2)
        values.append(s.mean())

        # Gradient of mean(s) w.r.t. x through the three filtered maps.
        npix = s.size
        g = np.full_like(s, 1.0 / npix)
        bb = b1 * b2
        m1 = g * 2.0 * (my * (a2 - a1) / bb + mx * s * (1.0 / b2 - 1.0 / b1))
        m2 = -g * s / b2           # via w*(x^2)
        m3 = 2.0 * g * a1 / bb     # via w*(x*y)
        grad[:, :, ch] = (
            _filt_adjoint(m1, w)
            + 2.0 * x * _filt_adjoint(m2, w)
            + y * _filt_adjoint(m3, w)
        ) / channels

    value = float(np.mean(values))
    if squeeze:
        grad = grad[:, :, 0]
    return value, grad
