"""Differentiable splat renderer: 3D->2D projection and alpha compositing.

Forward model, per pixel p:

    C[p] = sum_i c_i sigma_i prod_{j<i} (1 - sigma_j)  +  bg * prod_j (1 - sigma_j)

where the sum runs over Gaussians sorted front-to-back by camera depth,
sigma_i = alpha_i * exp(-0.5 d^T cov2d^{-1} d) and c_i is the SH color for
the per-Gaussian view direction.  The 2D covariance comes from the
first-order perspective approximation  cov2d = J W Sigma W^T J^T + reg*I,
with J the projection Jacobian at the Gaussian center and W the camera
rotation.

Compositing is done per pixel (no tile binning) with a 3-sigma screen
bounding box per Gaussian; pixels whose transmittance drops below
``T_EPS`` stop accumulating, and the backward pass treats those tails as
exactly absent.  ``render_backward`` replays the forward compositing in
the identical order, so gradients are exact for the function actually
computed, and repeated renders are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sh
from .gaussians import (
    ActivatedGaussians,
    activations_backward,
    apply_activations,
    build_covariance,
    build_covariance_backward,
)
from .scene import CloudGradients, GaussianCloud

NEAR_PLANE = 0.01
COV2D_REG = 0.3       # px^2 added to the projected covariance diagonal
T_EPS = 1e-4          # early-termination transmittance threshold
CULL_SIGMA = 3.0      # screen-bounds culling extent


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera: intrinsics in pixels plus a rigid world-to-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    T_wc: np.ndarray  # (4, 4)

    def __post_init__(self):
        object.__setattr__(self, "T_wc", np.asarray(self.T_wc, dtype=float))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 8 or self.height < 8:
            raise ValueError("image dimensions must be at least 8x8")
        if self.T_wc.shape != (4, 4):
            raise ValueError("T_wc must be 4x4")
        R = self.T_wc[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation block of T_wc is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.T_wc[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.T_wc[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera origin in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass
class ProjectedGaussian:
    """One Gaussian on the image plane; produced by project_gaussian."""

    mean2d: np.ndarray   # (2,) pixels
    cov2d: np.ndarray    # (2, 2) pixels^2, regularized
    depth: float         # camera-frame z, world units
    radius: float        # 3-sigma screen extent, pixels
    index: int


def perspective_jacobian(p_cam, fx, fy):
    """First-order projection Jacobians (N, 2, 3) at camera-frame points (N, 3)."""
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    J = np.zeros((p_cam.shape[0], 2, 3))
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * x / z**2
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * y / z**2
    return J


@dataclass
class Projection:
    """Vectorized projection of a whole cloud, with backward intermediates."""

    act: ActivatedGaussians
    p_cam: np.ndarray        # (N, 3)
    mean2d: np.ndarray       # (N, 2)
    cov2d: np.ndarray        # (N, 2, 2)
    inv_cov2d: np.ndarray    # (N, 2, 2), valid rows only
    depth: np.ndarray        # (N,)
    radius: np.ndarray       # (N,)
    sigma3: np.ndarray       # (N, 3, 3)
    J: np.ndarray            # (N, 2, 3)
    colors: np.ndarray       # (N, 3)
    viewdir: np.ndarray      # (N, 3) unit, camera center -> Gaussian
    view_len: np.ndarray     # (N,)
    valid: np.ndarray        # (N,) bool
    order: np.ndarray        # indices of valid Gaussians, ascending depth


def project_cloud(cloud: GaussianCloud, cam: CameraView,
                  near=NEAR_PLANE, reg=COV2D_REG) -> Projection:
    act = apply_activations(cloud.scale_log, cloud.rot_raw, cloud.opacity_logit)
    W = cam.rotation
    p_cam = cloud.mu @ W.T + cam.translation
    depth = p_cam[:, 2].copy()

    in_front = depth > near
    z = np.where(in_front, depth, 1.0)  # placeholder z for culled rows
    mean2d = np.stack(
        [cam.fx * p_cam[:, 0] / z + cam.cx, cam.fy * p_cam[:, 1] / z + cam.cy], axis=1
    )

    sigma3 = build_covariance(act.scale, act.rot)
    J = perspective_jacobian(np.where(in_front[:, None], p_cam, [0.0, 0.0, 1.0]), cam.fx, cam.fy)
    M = J @ W  # (N, 2, 3)
    cov2d = M @ sigma3 @ np.swapaxes(M, 1, 2)
    cov2d[:, 0, 0] += reg
    cov2d[:, 1, 1] += reg

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b**2, 0.0))
    lam_max = mid + disc
    radius = CULL_SIGMA * np.sqrt(np.maximum(lam_max, 0.0))

    on_screen = (
        (mean2d[:, 0] + radius > 0.0)
        & (mean2d[:, 0] - radius < cam.width)
        & (mean2d[:, 1] + radius > 0.0)
        & (mean2d[:, 1] - radius < cam.height)
    )
    valid = in_front & on_screen

    det = a * c - b * b
    inv_cov2d = np.zeros_like(cov2d)
    safe_det = np.where(valid, det, 1.0)
    inv_cov2d[:, 0, 0] = c / safe_det
    inv_cov2d[:, 0, 1] = -b / safe_det
    inv_cov2d[:, 1, 0] = -b / safe_det
    inv_cov2d[:, 1, 1] = a / safe_det

    view = cloud.mu - cam.center
    view_len = np.linalg.norm(view, axis=1)
    view_len = np.maximum(view_len, 1e-12)
    viewdir = view / view_len[:, None]
    colors = sh.eval_sh_color(cloud.sh, viewdir, cloud.sh_order)

    order = depth_sort(np.where(valid, depth, np.inf))
    order = order[: int(valid.sum())]

    return Projection(
        act=act, p_cam=p_cam, mean2d=mean2d, cov2d=cov2d, inv_cov2d=inv_cov2d,
        depth=depth, radius=radius, sigma3=sigma3, J=J, colors=colors,
        viewdir=viewdir, view_len=view_len, valid=valid, order=order,
    )


def project_gaussian(mu, scale, rot, cam: CameraView,
                     near=NEAR_PLANE, reg=COV2D_REG):
    """Project a single activated Gaussian; returns None when culled."""
    cloud = GaussianCloud(
        mu=np.asarray(mu, dtype=float)[None],
        scale_log=np.log(np.asarray(scale, dtype=float))[None],
        rot_raw=np.asarray(rot, dtype=float)[None],
        opacity_logit=np.zeros(1),
        sh=np.zeros((1, 3, 1)),
        sh_order=0,
    )
    proj = project_cloud(cloud, cam, near=near, reg=reg)
    if not proj.valid[0]:
        return None
    return ProjectedGaussian(
        mean2d=proj.mean2d[0],
        cov2d=proj.cov2d[0],
        depth=float(proj.depth[0]),
        radius=float(proj.radius[0]),
        index=0,
    )


def depth_sort(depths) -> np.ndarray:
    """Permutation sorting depths ascending; ties keep input order."""
    return np.argsort(np.asarray(depths), kind="stable")


@dataclass
class RenderResult:
    image: np.ndarray          # (H, W, 3) in [0, 1]
    transmittance: np.ndarray  # (H, W) residual background visibility
    clamp_fraction: float      # fraction of pixel-channels clipped to [0, 1]


def _bbox(mean2d, radius, width, height):
    x0 = max(0, int(np.floor(mean2d[0] - radius)))
    x1 = min(width, int(np.ceil(mean2d[0] + radius)) + 1)
    y0 = max(0, int(np.floor(mean2d[1] - radius)))
    y1 = min(height, int(np.ceil(mean2d[1] + radius)) + 1)
    return x0, x1, y0, y1


def _splat_weights(proj: Projection, i: int, x0, x1, y0, y1):
    """sigma values of Gaussian i over its bounding box: alpha * exp(-q/2)."""
    px = np.arange(x0, x1) + 0.5
    py = np.arange(y0, y1) + 0.5
    dx = px[None, :] - proj.mean2d[i, 0]
    dy = py[:, None] - proj.mean2d[i, 1]
    ia, ib, ic = proj.inv_cov2d[i, 0, 0], proj.inv_cov2d[i, 0, 1], proj.inv_cov2d[i, 1, 1]
    q = ia * dx**2 + 2 * ib * dx * dy + ic * dy**2
    g = np.exp(-0.5 * q)
    return g, dx, dy


def render(cloud: GaussianCloud, cam: CameraView, background=(0.0, 0.0, 0.0)) -> RenderResult:
    """Render the cloud; an empty or fully-culled cloud yields pure background."""
    bg = np.broadcast_to(np.asarray(background, dtype=float), (3,))
    H, W = cam.height, cam.width
    color = np.zeros((H, W, 3))
    T = np.ones((H, W))

    if cloud.n > 0:
        proj = project_cloud(cloud, cam)
        for i in proj.order:
            x0, x1, y0, y1 = _bbox(proj.mean2d[i], proj.radius[i], W, H)
            if x0 >= x1 or y0 >= y1:
                continue
            g, _, _ = _splat_weights(proj, i, x0, x1, y0, y1)
            Tb = T[y0:y1, x0:x1]
            sig = np.where(Tb >= T_EPS, proj.act.opacity[i] * g, 0.0)
            color[y0:y1, x0:x1] += (sig * Tb)[:, :, None] * proj.colors[i]
            T[y0:y1, x0:x1] = Tb * (1.0 - sig)

    color += T[:, :, None] * bg
    image = np.clip(color, 0.0, 1.0)
    clamp_fraction = float(np.mean((color < 0.0) | (color > 1.0)))
    return RenderResult(image=image, transmittance=T, clamp_fraction=clamp_fraction)


def render_backward(cloud: GaussianCloud, cam: CameraView, background,
                    upstream: np.ndarray) -> CloudGradients:
    """Exact gradients of render() w.r.t. every raw cloud parameter.

    ``upstream`` is dL/d(image), shape (H, W, 3).  The compositing forward
    is replayed in the same order to rebuild per-contribution state.
    """
    H, W = cam.height, cam.width
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (H, W, 3):
        raise ValueError(f"upstream shape {upstream.shape} does not match image ({H}, {W}, 3)")
    bg = np.broadcast_to(np.asarray(background, dtype=float), (3,))
    grads = CloudGradients.zeros_like(cloud)
    if cloud.n == 0:
        return grads

    proj = project_cloud(cloud, cam)
    V = len(proj.order)

    # Replay 1: accumulated foreground color and final transmittance, plus
    # the clamp gate for the upstream.
    color = np.zeros((H, W, 3))
    T = np.ones((H, W))
    sigmas = []  # per processed Gaussian: (slice bounds, sigma map)
    for i in proj.order:
        x0, x1, y0, y1 = _bbox(proj.mean2d[i], proj.radius[i], W, H)
        if x0 >= x1 or y0 >= y1:
            sigmas.append(None)
            continue
        g, _, _ = _splat_weights(proj, i, x0, x1, y0, y1)
        Tb = T[y0:y1, x0:x1]
        sig = np.where(Tb >= T_EPS, proj.act.opacity[i] * g, 0.0)
        color[y0:y1, x0:x1] += (sig * Tb)[:, :, None] * proj.colors[i]
        T[y0:y1, x0:x1] = Tb * (1.0 - sig)
        sigmas.append((x0, x1, y0, y1, sig, g))
    raw = color + T[:, :, None] * bg
    gate = (raw >= 0.0) & (raw <= 1.0)
    u = upstream * gate  # dL/d(pre-clamp color)

    total = raw  # per-pixel total including background term

    # Replay 2: front-to-back with running prefix -> per-Gaussian grads.
    d_mean2d = np.zeros((cloud.n, 2))
    d_cov2d = np.zeros((cloud.n, 2, 2))
    d_color = np.zeros((cloud.n, 3))
    d_alpha = np.zeros(cloud.n)

    prefix = np.zeros((H, W, 3))
    T = np.ones((H, W))
    for k, i in enumerate(proj.order):
        entry = sigmas[k]
        if entry is None:
            continue
        x0, x1, y0, y1, sig, g = entry
        Tb = T[y0:y1, x0:x1]
        ub = u[y0:y1, x0:x1]
        contrib = (sig * Tb)[:, :, None] * proj.colors[i]
        prefix[y0:y1, x0:x1] += contrib

        # Suffix color seen behind this Gaussian (its own contribution excluded).
        suffix = total[y0:y1, x0:x1] - prefix[y0:y1, x0:x1]
        denom = np.maximum(1.0 - sig, 1e-300)

        d_color[i] = np.einsum("yxc,yx->c", ub, sig * Tb)
        d_sig = np.einsum("yxc,c->yx", ub, proj.colors[i]) * Tb
        d_sig -= np.einsum("yxc,yxc->yx", ub, suffix) / denom
        d_sig *= sig > 0.0  # frozen pixels contributed nothing

        d_alpha[i] = float(np.sum(d_sig * g))
        d_g = d_sig * proj.act.opacity[i]

        # g = exp(-q/2) backward over the bbox.
        px = np.arange(x0, x1) + 0.5
        py = np.arange(y0, y1) + 0.5
        dx = px[None, :] - proj.mean2d[i, 0]
        dy = py[:, None] - proj.mean2d[i, 1]
        dq = -0.5 * g * d_g
        ia, ib_, ic = proj.inv_cov2d[i, 0, 0], proj.inv_cov2d[i, 0, 1], proj.inv_cov2d[i, 1, 1]
        ux_ = ia * dx + ib_ * dy   # (cov^{-1} d)_x
        uy_ = ib_ * dx + ic * dy
        # d = p - mean2d, so d_mean2d = -sum dL/dd
        d_mean2d[i, 0] = -2.0 * np.sum(dq * ux_)
        d_mean2d[i, 1] = -2.0 * np.sum(dq * uy_)
        # dq/dA = d d^T with A = inv_cov; dL/dcov = -A (dL/dA) A, which
        # collapses to outer products of u = A d.
        duu = np.sum(dq * ux_ * ux_)
        duv = np.sum(dq * ux_ * uy_)
        dvv = np.sum(dq * uy_ * uy_)
        d_cov2d[i, 0, 0] = -duu
        d_cov2d[i, 0, 1] = -duv
        d_cov2d[i, 1, 0] = -duv
        d_cov2d[i, 1, 1] = -dvv

        T[y0:y1, x0:x1] = Tb * (1.0 - sig)

    if V == 0:
        return grads

    # Vectorized chain back to raw parameters over the visible set.
    vis = proj.order
    Wrot = cam.rotation
    M = proj.J[vis] @ Wrot
    dS2 = d_cov2d[vis]
    sym = dS2 + np.swapaxes(dS2, 1, 2)

    d_sigma3 = np.einsum("nai,nab,nbj->nij", M, dS2, M)
    dM = np.einsum("nab,nbi,nij->naj", sym, M, proj.sigma3[vis])
    dJ = dM @ Wrot.T

    # Projection Jacobian J depends on p_cam.
    x, y, z = proj.p_cam[vis, 0], proj.p_cam[vis, 1], proj.p_cam[vis, 2]
    fx, fy = cam.fx, cam.fy
    d_pcam = np.zeros((len(vis), 3))
    d_pcam[:, 0] += dJ[:, 0, 2] * (-fx / z**2)
    d_pcam[:, 1] += dJ[:, 1, 2] * (-fy / z**2)
    d_pcam[:, 2] += (
        dJ[:, 0, 0] * (-fx / z**2)
        + dJ[:, 1, 1] * (-fy / z**2)
        + dJ[:, 0, 2] * (2 * fx * x / z**3)
        + dJ[:, 1, 2] * (2 * fy * y / z**3)
    )
    # Pinhole mean.
    dm = d_mean2d[vis]
    d_pcam[:, 0] += dm[:, 0] * fx / z
    d_pcam[:, 1] += dm[:, 1] * fy / z
    d_pcam[:, 2] += -dm[:, 0] * fx * x / z**2 - dm[:, 1] * fy * y / z**2

    d_mu = d_pcam @ Wrot

    # SH color path (clamp-gated), including the view-direction dependence.
    d_h, d_dir = sh.eval_sh_color_backward(
        cloud.sh[vis], proj.viewdir[vis], cloud.sh_order, proj.colors[vis], d_color[vis]
    )
    dd = proj.viewdir[vis]
    proj_dir = d_dir - dd * np.sum(dd * d_dir, axis=1, keepdims=True)
    d_mu += proj_dir / proj.view_len[vis][:, None]

    # Covariance path to activated scale/rotation, then raw.
    d_scale, d_rot = build_covariance_backward(proj.act.scale[vis], proj.act.rot[vis], d_sigma3)

    act_vis = ActivatedGaussians(
        scale=proj.act.scale[vis],
        rot=proj.act.rot[vis],
        opacity=proj.act.opacity[vis],
        rot_raw_norm=proj.act.rot_raw_norm[vis],
    )
    d_scale_log, d_rot_raw, d_opacity_logit = activations_backward(
        act_vis, d_scale, d_rot, d_alpha[vis]
    )

    grads.mu[vis] = d_mu
    grads.scale_log[vis] = d_scale_log
    grads.rot_raw[vis] = d_rot_raw
    grads.opacity_logit[vis] = d_opacity_logit
    grads.sh[vis] = d_h
    return grads
