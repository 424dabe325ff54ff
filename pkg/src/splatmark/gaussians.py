"""Per-Gaussian primitive math: activations, covariance, 2D density.

A splat scene stores raw (pre-activation) parameters per Gaussian:

    position     mu            (3,)  world units, no activation
    scale_log    s_raw         (3,)  log-units
    rotation     r_raw         (4,)  unnormalized quaternion, (w, x, y, z)
    opacity      alpha_raw     ()    pre-sigmoid logit
    sh           h             (3, (k+1)^2)  spherical-harmonic color coeffs

Activations map raw values onto their geometric domains: exp for scale
(strictly positive), L2 normalization for the quaternion, sigmoid for
opacity.  The 3D covariance is assembled as R * diag(s)^2 * R^T, which is
symmetric positive semi-definite by construction.

Every forward function here has a matching ``*_backward`` companion
returning exact reverse-mode gradients; the renderer chains them.  All
functions are pure and operate on vectorized (N, ...) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Raw quaternions shorter than this are rejected rather than silently
# snapped to identity.
DEGENERATE_ROTATION_NORM = 1e-8


class DegenerateRotationError(ValueError):
    """Raw quaternion norm below the degeneracy threshold."""


class DegenerateCovarianceError(ValueError):
    """Projected 2x2 covariance is numerically singular."""


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def inverse_sigmoid(y):
    y = np.asarray(y, dtype=float)
    return np.log(y / (1.0 - y))


@dataclass
class ActivatedGaussians:
    """Activation outputs for a batch of Gaussians.

    ``scale`` is strictly positive, ``rot`` is unit-norm, ``opacity`` lies
    in (0, 1).  ``rot_raw_norm`` is kept for the backward pass.
    """

    scale: np.ndarray        # (N, 3)
    rot: np.ndarray          # (N, 4) unit quaternions
    opacity: np.ndarray      # (N,)
    rot_raw_norm: np.ndarray  # (N,)


def apply_activations(scale_log, rot_raw, opacity_logit) -> ActivatedGaussians:
    """Map raw parameters to activated ones (exp / normalize / sigmoid)."""
    scale_log = np.atleast_2d(np.asarray(scale_log, dtype=float))
    rot_raw = np.atleast_2d(np.asarray(rot_raw, dtype=float))
    opacity_logit = np.atleast_1d(np.asarray(opacity_logit, dtype=float))

    norms = np.linalg.norm(rot_raw, axis=1)
    if np.any(norms < DEGENERATE_ROTATION_NORM):
        bad = int(np.argmin(norms))
        raise DegenerateRotationError(
            f"degenerate rotation: |r_raw| = {norms[bad]:.3e} at index {bad}"
        )
    return ActivatedGaussians(
        scale=np.exp(scale_log),
        rot=rot_raw / norms[:, None],
        opacity=sigmoid(opacity_logit),
        rot_raw_norm=norms,
    )


def activations_backward(act: ActivatedGaussians, d_scale, d_rot, d_opacity):
    """Gradients of the activations w.r.t. raw parameters.

    d(exp)/ds_raw = s, normalization Jacobian (I - r r^T)/|r_raw|,
    d(sigmoid)/da_raw = a(1-a).
    """
    d_scale_log = d_scale * act.scale
    # (I - r r^T) @ d_rot, per row
    proj = d_rot - act.rot * np.sum(act.rot * d_rot, axis=1, keepdims=True)
    d_rot_raw = proj / act.rot_raw_norm[:, None]
    d_opacity_logit = d_opacity * act.opacity * (1.0 - act.opacity)
    return d_scale_log, d_rot_raw, d_opacity_logit


def quat_to_rotmat(q):
    """Unit quaternions (N, 4) in (w, x, y, z) order to rotation matrices (N, 3, 3)."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rotmat_backward(q, dR):
    """Pull dL/dR (N,3,3) back to dL/dq (N,4) for unit quaternions."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)

    def stack(rows):
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    dR_dw = 2 * stack([[zero, -z, y], [z, zero, -x], [-y, x, zero]])
    dR_dx = 2 * stack([[zero, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dR_dy = 2 * stack([[-2 * y, x, w], [x, zero, z], [-w, z, -2 * y]])
    dR_dz = 2 * stack([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zero]])

    dq = np.empty_like(q)
    for i, dRdq in enumerate((dR_dw, dR_dx, dR_dy, dR_dz)):
        dq[:, i] = np.einsum("nij,nij->n", dR, dRdq)
    return dq


def build_covariance(scale, rot):
    """Sigma = R S S^T R^T for activated scale (N,3) and unit quaternion (N,4).

    Returns (N, 3, 3); symmetric PSD by construction.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    R = quat_to_rotmat(rot)
    M = R * scale[:, None, :]  # column scaling: M = R @ diag(s)
    return M @ np.swapaxes(M, 1, 2)


def build_covariance_backward(scale, rot, d_sigma):
    """Gradients of build_covariance w.r.t. scale and unit quaternion.

    d_sigma is dL/dSigma (N,3,3), not assumed symmetric.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    R = quat_to_rotmat(rot)
    M = R * scale[:, None, :]
    sym = d_sigma + np.swapaxes(d_sigma, 1, 2)  # Sigma = M M^T => dM = (G + G^T) M
    dM = sym @ M
    d_scale = np.einsum("nij,nij->nj", dM, R)
    dR = dM * scale[:, None, :]
    d_rot = quat_to_rotmat_backward(rot, dR)
    return d_scale, d_rot


def eval_gaussian_2d(p, mean2d, cov2d, det_floor=1e-12):
    """exp(-0.5 d^T cov^{-1} d) for offsets d = p - mean2d.

    ``p`` may be (..., 2); mean2d is (2,); cov2d (2, 2).  The opacity
    multiplication happens in the renderer, so values land in (0, 1].
    """
    p = np.asarray(p, dtype=float)
    d = p - np.asarray(mean2d, dtype=float)
    a, b, c = cov2d[0, 0], cov2d[0, 1], cov2d[1, 1]
    det = a * c - b * b
    if det <= det_floor:
        raise DegenerateCovarianceError(f"degenerate projected covariance: det = {det:.3e}")
    inv_a, inv_b, inv_c = c / det, -b / det, a / det
    q = inv_a * d[..., 0] ** 2 + 2 * inv_b * d[..., 0] * d[..., 1] + inv_c * d[..., 1] ** 2
    return np.exp(-0.5 * q)


def eval_gaussian_2d_backward(p, mean2d, cov2d, g, dg):
    """Gradients of eval_gaussian_2d given its output g and upstream dg.

    Returns (d_p, d_mean2d, d_cov2d); d_mean2d and d_cov2d are summed over
    the leading point dimensions.
    """
    p = np.asarray(p, dtype=float)
    d = p - np.asarray(mean2d, dtype=float)
    inv = np.linalg.inv(cov2d)
    u = d @ inv.T  # cov^{-1} d, shape (..., 2)
    dq = -0.5 * g * dg  # dL/dq
    d_p = dq[..., None] * 2.0 * u
    d_mean = -d_p.reshape(-1, 2).sum(axis=0)
    # dq/dA = d d^T with A = cov^{-1}; dL/dcov = -A (dL/dA) A
    flat_d = d.reshape(-1, 2)
    flat_dq = dq.reshape(-1)
    dA = np.einsum("n,ni,nj->ij", flat_dq, flat_d, flat_d)
    d_cov = -inv @ dA @ inv
    return d_p, d_mean, d_cov
