"""Real spherical-harmonic color evaluation, orders 0..3.

View-dependent color is a linear combination of real SH basis functions
of the (unit) view direction, one coefficient row per color channel:

    rgb = clamp(sum_b Y_b(dir) * h[:, b] + 0.5, min 0)

The +0.5 offset and the basis constants follow the widespread splat-scene
interchange convention, so coefficients read from published PLY files
render with their intended colors.  Order k contributes (k+1)^2 basis
functions; the order-0 band is the view-independent ("dc") color.
"""

from __future__ import annotations

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

SUPPORTED_ORDERS = (0, 1, 2, 3)

SH_OFFSET = 0.5


def n_sh_bases(order: int) -> int:
    return (order + 1) ** 2


def sh_basis(dirs, order: int):
    """Evaluate the real SH basis at unit directions (N, 3) -> (N, (k+1)^2)."""
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported SH order {order}; expected one of {SUPPORTED_ORDERS}")
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    Y = np.empty((n, n_sh_bases(order)))
    Y[:, 0] = SH_C0
    if order >= 1:
        Y[:, 1] = -SH_C1 * y
        Y[:, 2] = SH_C1 * z
        Y[:, 3] = -SH_C1 * x
    if order >= 2:
        xx, yy, zz = x * x, y * y, z * z
        Y[:, 4] = SH_C2[0] * x * y
        Y[:, 5] = SH_C2[1] * y * z
        Y[:, 6] = SH_C2[2] * (2 * zz - xx - yy)
        Y[:, 7] = SH_C2[3] * x * z
        Y[:, 8] = SH_C2[4] * (xx - yy)
    if order >= 3:
        xx, yy, zz = x * x, y * y, z * z
        Y[:, 9] = SH_C3[0] * y * (3 * xx - yy)
        Y[:, 10] = SH_C3[1] * x * y * z
        Y[:, 11] = SH_C3[2] * y * (4 * zz - xx - yy)
        Y[:, 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        Y[:, 13] = SH_C3[4] * x * (4 * zz - xx - yy)
        Y[:, 14] = SH_C3[5] * z * (xx - yy)
        Y[:, 15] = SH_C3[6] * x * (xx - 3 * yy)
    return Y


def sh_basis_dir_jacobian(dirs, order: int):
    """d(basis)/d(dir): (N, (k+1)^2, 3) of partial derivatives."""
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported SH order {order}; expected one of {SUPPORTED_ORDERS}")
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    zero = np.zeros(n)
    J = np.zeros((n, n_sh_bases(order), 3))
    if order >= 1:
        J[:, 1] = np.stack([zero, -SH_C1 * np.ones(n), zero], axis=1)
        J[:, 2] = np.stack([zero, zero, SH_C1 * np.ones(n)], axis=1)
        J[:, 3] = np.stack([-SH_C1 * np.ones(n), zero, zero], axis=1)
    if order >= 2:
        J[:, 4] = SH_C2[0] * np.stack([y, x, zero], axis=1)
        J[:, 5] = SH_C2[1] * np.stack([zero, z, y], axis=1)
        J[:, 6] = SH_C2[2] * np.stack([-2 * x, -2 * y, 4 * z], axis=1)
        J[:, 7] = SH_C2[3] * np.stack([z, zero, x], axis=1)
        J[:, 8] = SH_C2[4] * np.stack([2 * x, -2 * y, zero], axis=1)
    if order >= 3:
        J[:, 9] = SH_C3[0] * np.stack([6 * x * y, 3 * x * x - 3 * y * y, zero], axis=1)
        J[:, 10] = SH_C3[1] * np.stack([y * z, x * z, x * y], axis=1)
        J[:, 11] = SH_C3[2] * np.stack(
            [-2 * x * y, 4 * z * z - x * x - 3 * y * y, 8 * y * z], axis=1
        )
        J[:, 12] = SH_C3[3] * np.stack(
            [-6 * x * z, -6 * y * z, 6 * z * z - 3 * x * x - 3 * y * y], axis=1
        )
        J[:, 13] = SH_C3[4] * np.stack(
            [4 * z * z - 3 * x * x - y * y, -2 * x * y, 8 * x * z], axis=1
        )
        J[:, 14] = SH_C3[5] * np.stack([2 * x * z, -2 * y * z, x * x - y * y], axis=1)
        J[:, 15] = SH_C3[6] * np.stack([3 * x * x - 3 * y * y, -6 * x * y, zero], axis=1)
    return J


def eval_sh_color(h, dirs, order: int):
    """Colors (N, 3) from coefficients h (N, 3, B) at unit directions (N, 3).

    Clamped at 0 from below; values above 1 pass through (the renderer
    clamps the composited image instead).
    """
    h = np.asarray(h, dtype=float)
    if h.ndim == 2:
        h = h[None]
    Y = sh_basis(dirs, order)
    rgb = np.einsum("nb,ncb->nc", Y, h) + SH_OFFSET
    return np.maximum(rgb, 0.0)


def eval_sh_color_backward(h, dirs, order: int, rgb, d_rgb):
    """Gradients of eval_sh_color w.r.t. coefficients and direction.

    ``rgb`` is the clamped forward output; the clamped region (rgb == 0)
    carries zero gradient.  Returns (d_h (N,3,B), d_dirs (N,3)).
    """
    h = np.asarray(h, dtype=float)
    if h.ndim == 2:
        h = h[None]
    Y = sh_basis(dirs, order)
    gate = d_rgb * (rgb > 0.0)
    d_h = np.einsum("nc,nb->ncb", gate, Y)
    dY = np.einsum("nc,ncb->nb", gate, h)
    J = sh_basis_dir_jacobian(dirs, order)
    d_dirs = np.einsum("nb,nbd->nd", dY, J)
    return d_h, d_dirs
