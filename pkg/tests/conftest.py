"""Shared fixtures and the finite-difference oracle used across the suite.

Expensive artifacts (trained codec, toy scene, fitted cloud) are session
scoped so the acceptance tests can share them instead of retraining.
"""

import numpy as np
import pytest

from splatmark import datasets
from splatmark.codec import CodecConfig, train_codec


def central_diff(f, x, eps=1e-5):
    """Central finite differences of scalar f at array x."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f(x)
        flat[i] = old - eps
        lo = f(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    """Relative error between gradient arrays, safe near zero."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def gradcheck(f_and_grad, x, eps=1e-5):
    """Compare analytic gradient against central differences.

    f_and_grad(x) -> (scalar, grad array shaped like x).
    Returns the max relative error.
    """
    _, analytic = f_and_grad(x)
    numeric = central_diff(lambda y: f_and_grad(y)[0], np.array(x, dtype=float), eps)
    return rel_err(analytic, numeric)


@pytest.fixture(scope="session")
def toy_scene():
    return datasets.make_toy_scene(seed=3, n_gaussians=300, n_views=8,
                                   image_size=64, sh_order=1)


@pytest.fixture(scope="session")
def desk_codec():
    """Codec trained at the full desk configuration (shared by the suite)."""
    config = CodecConfig(message_len=16, image_size=64, channels=16,
                         corpus_size=512, seed=0)
    codec, report = train_codec(config)
    return codec, report
