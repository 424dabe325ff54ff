"""Scene fitting and watermark embedding by fine-tuning.

Stage 0 (``fit_scene``) optimizes all raw Gaussian parameters against
ground-truth views with the photometric loss alone.  Stage 2 (``embed``)
fine-tunes a fitted cloud against a frozen decoder: each iteration
samples a training view and a 3D distortion, renders the distorted
cloud, decodes the render, and takes a masked Adam step on

    L_tot = L_rgb + gamma * L_m,   L_rgb = (1-beta)*L1 + beta*(1-SSIM)

where L_m is the BCE between decoder logits and the target bits.
Gradients reach only the distortion's surviving points; removed points
and masked-off fields stay bit-identical.  A clean (identity) render is
decoded every iteration for monitoring; embedding stops early once the
mean BER over the trailing window hits the target.

The Gaussian count is fixed throughout: no densification or pruning, so
parameter masks keep their shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import codec as codec_mod
from . import nn
from .distortions import DistortionPolicy, apply_distortion, sample_distortion
from .metrics import psnr, ssim
from .renderer import CameraView, render, render_backward
from .scene import GaussianCloud

MASK_FIELDS = ("mu", "scale", "rot", "opacity", "h_dc", "h_rest")


class DivergenceError(RuntimeError):
    """Optimization loss blew up; carries the iteration index."""

    def __init__(self, iteration, loss):
        super().__init__(f"optimization diverged at iteration {iteration}: loss={loss:.3e}")
        self.iteration = iteration


@dataclass(frozen=True)
class ParamMask:
    """Which parameter fields embedding may update.

    Each field is a bool, or a per-point (N,) bool array.  h_dc is the
    order-0 SH coefficient, h_rest all higher orders.
    """

    mu: object = False
    scale: object = False
    rot: object = False
    opacity: object = False
    h_dc: object = False
    h_rest: object = False

    @staticmethod
    def all_fields() -> "ParamMask":
        return ParamMask(mu=True, scale=True, rot=True, opacity=True,
                         h_dc=True, h_rest=True)

    @staticmethod
    def only(*names) -> "ParamMask":
        for n in names:
            if n not in MASK_FIELDS:
                raise ValueError(f"unknown mask field {n!r}")
        return ParamMask(**{n: True for n in names})

    def any_enabled(self) -> bool:
        return any(np.any(getattr(self, n)) for n in MASK_FIELDS)

    def field_masks(self, cloud: GaussianCloud) -> dict:
        """Full-shape boolean masks keyed by cloud field name."""
        n = cloud.n

        def expand(flag, shape):
            arr = np.asarray(flag, dtype=bool)
            if arr.ndim == 0:
                return np.broadcast_to(arr, shape).copy()
            if arr.shape != (n,):
                raise ValueError(f"per-point mask must have shape ({n},), got {arr.shape}")
            return np.broadcast_to(arr.reshape((n,) + (1,) * (len(shape) - 1)), shape).copy()

        sh_mask = np.zeros(cloud.sh.shape, dtype=bool)
        sh_mask[:, :, :1] = expand(self.h_dc, cloud.sh[:, :, :1].shape)
        if cloud.sh.shape[2] > 1:
            sh_mask[:, :, 1:] = expand(self.h_rest, cloud.sh[:, :, 1:].shape)
        return {
            "mu": expand(self.mu, cloud.mu.shape),
            "scale_log": expand(self.scale, cloud.scale_log.shape),
            "rot_raw": expand(self.rot, cloud.rot_raw.shape),
            "opacity_logit": expand(self.opacity, cloud.opacity_logit.shape),
            "sh": sh_mask,
        }


class CloudAdam:
    """One Adam state per raw parameter field of a fixed-size cloud."""

    def __init__(self, cloud: GaussianCloud):
        self.states = {
            "mu": nn.AdamState(cloud.mu.shape),
            "scale_log": nn.AdamState(cloud.scale_log.shape),
            "rot_raw": nn.AdamState(cloud.rot_raw.shape),
            "opacity_logit": nn.AdamState(cloud.opacity_logit.shape),
            "sh": nn.AdamState(cloud.sh.shape),
        }

    def step(self, cloud: GaussianCloud, grads, lr, field_masks=None) -> GaussianCloud:
        out = cloud.copy()
        for name, state in self.states.items():
            param = getattr(cloud, name)
            grad = getattr(grads, name)
            if grad.shape != param.shape:
                raise ValueError(f"gradient shape {grad.shape} != {name} shape {param.shape}")
            if field_masks is not None:
                mask = field_masks[name]
                grad = grad * mask
                updated = state.step(param, grad, lr)
                setattr(out, name, np.where(mask, updated, param))
            else:
                setattr(out, name, state.step(param, grad, lr))
        return out


def masked_update(cloud, grads, mask: ParamMask, optimizer: CloudAdam, lr):
    """Adam step applied only where the mask enables; rest bit-identical."""
    return optimizer.step(cloud, grads, lr, mask.field_masks(cloud))


@dataclass(frozen=True)
class TrainView:
    camera: CameraView
    image: np.ndarray

    def __post_init__(self):
        img = np.asarray(self.image, dtype=float)
        if img.shape != (self.camera.height, self.camera.width, 3):
            raise ValueError(
                f"image shape {img.shape} does not match camera "
                f"{self.camera.height}x{self.camera.width}x3"
            )
        object.__setattr__(self, "image", img)


# --- losses ----------------------------------------------------------------

def rgb_loss(pred, gt, beta):
    """(1-beta)*L1 + beta*(1-SSIM) and its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must be in [0, 1]")
    diff = pred - gt
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - beta) * np.sign(diff) / diff.size
    if beta > 0.0:
        s, s_grad = ssim(pred, gt)
        loss = (1.0 - beta) * l1 + beta * (1.0 - s)
        grad = grad - beta * s_grad
    else:
        loss = l1
    return loss, grad


def total_loss(pred, gt, logits, message, beta, gamma):
    """L_rgb + gamma*BCE; returns (scalar, d_pred_rgb_part, d_logits).

    The message term reaches the image through the decoder's input
    gradient, so the caller feeds d_logits into decode_backward and adds
    the result to d_pred_rgb_part.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    l_rgb, d_pred = rgb_loss(pred, gt, beta)
    l_m, d_logits = nn.bce_loss(logits, np.asarray(message, dtype=float))
    return l_rgb + gamma * l_m, d_pred, gamma * d_logits, l_rgb, l_m


# --- stage 0: photometric fit -----------------------------------------------

@dataclass
class FitConfig:
    lr: float = 0.01
    n_iters: int = 500
    beta: float = 0.2
    seed: int = 0
    divergence_loss: float = 1e4
    background: tuple = (0.0, 0.0, 0.0)


@dataclass
class FitReport:
    iterations_run: int
    final_psnr: float
    losses: list = field(default_factory=list)


def fit_scene(views, init: GaussianCloud, config: FitConfig):
    """Photometric-only Adam fit of all raw parameters.

    Returns (cloud, FitReport).  Zero iterations returns the init
    unchanged.  Raises DivergenceError with the iteration index if the
    loss explodes.
    """
    if len(views) < 2:
        raise ValueError(f"need at least 2 views, got {len(views)}")
    cloud = init.copy()
    if config.n_iters == 0:
        return cloud, FitReport(iterations_run=0, final_psnr=_mean_psnr(cloud, views, config.background))
    rng = np.random.default_rng(config.seed)
    opt = CloudAdam(cloud)
    losses = []
    for it in range(config.n_iters):
        view = views[int(rng.integers(len(views)))]
        res = render(cloud, view.camera, background=config.background)
        loss, d_img = rgb_loss(res.image, view.image, config.beta)
        if not np.isfinite(loss) or loss > config.divergence_loss:
            raise DivergenceError(it, loss)
        grads = render_backward(cloud, view.camera, config.background, d_img)
        cloud = opt.step(cloud, grads, config.lr)
        losses.append(loss)
    return cloud, FitReport(
        iterations_run=config.n_iters,
        final_psnr=_mean_psnr(cloud, views, config.background),
        losses=losses,
    )


def _mean_psnr(cloud, views, background):
    vals = [psnr(render(cloud, v.camera, background=background).image, v.image)
            for v in views]
    return float(np.mean(vals))


# --- stage 2: watermark embedding -------------------------------------------

@dataclass
class EmbedConfig:
    gamma: float = 0.3
    beta: float = 0.2
    lr: float = 0.005
    n_iters: int = 2000
    policy: DistortionPolicy = field(default_factory=DistortionPolicy)
    target_ber: float = 0.0
    ber_window: int = 20
    seed: int = 0
    divergence_loss: float = 1e4
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")


@dataclass
class EmbedReport:
    """Per-iteration log plus end-of-run clean-render metrics."""

    iterations_run: int
    stopped_early: bool
    running_ber: float
    final_ber: float          # clean renders, all views, at the end
    final_psnr: float         # vs pre-watermark renders, mean over views
    lines: list = field(default_factory=list)

    def format_lines(self):
        return [
            ("iter={iter} distortion={distortion} l_rgb={l_rgb:.6f} "
             "l_m={l_m:.6f} ber={ber:.4f} psnr={psnr:.2f}").format(**ln)
            for ln in self.lines
        ]


def embed(cloud: GaussianCloud, codec, message, views, mask: ParamMask,
          config: EmbedConfig, log=None):
    """Fine-tune the cloud so every view's render decodes to ``message``.

    The decoder stays frozen.  Returns (watermarked cloud, EmbedReport).
    """
    message = codec_mod.validate_message(message)
    if message.size != codec.message_len:
        raise ValueError(
            f"message has {message.size} bits, decoder expects {codec.message_len}"
        )
    if not mask.any_enabled():
        raise ValueError("parameter mask enables no fields")
    if not views:
        raise ValueError("need at least one view")
    rng = np.random.default_rng(config.seed)
    pre_renders = [render(cloud, v.camera, background=config.background).image
                   for v in views]
    current = cloud.copy()
    opt = CloudAdam(current)
    field_masks = mask.field_masks(current)
    msg_f = message.astype(float)
    ber_hist = []
    lines = []
    stopped = False
    it = 0
    for it in range(config.n_iters):
        vi = int(rng.integers(len(views)))
        view = views[vi]
        spec = sample_distortion(config.policy, rng)
        distorted, keep = apply_distortion(current, spec)
        res = render(distorted, view.camera, background=config.background)
        logits, dec_tape = codec_mod.decode_image(codec, res.image)
        l_tot, d_img, d_logits, l_rgb, l_m = total_loss(
            res.image, view.image, logits, msg_f, config.beta, config.gamma)
        if not np.isfinite(l_tot) or l_tot > config.divergence_loss:
            raise DivergenceError(it, l_tot)
        _, d_img_msg = codec_mod.decode_backward(codec, dec_tape, d_logits)
        grads_local = render_backward(distorted, view.camera,
                                      config.background, d_img + d_img_msg)
        grads = grads_local.scatter_to(keep, current.n)
        current = opt.step(current, grads, config.lr, field_masks)

        # Clean-render monitoring on the sampled view, every iteration.
        clean = render(current, view.camera, background=config.background).image
        bits = codec_mod.decode_bits(codec, clean)
        it_ber = float(np.mean(bits != message))
        it_psnr = psnr(clean, pre_renders[vi])
        ber_hist.append(it_ber)
        lines.append({"iter": it, "distortion": spec.to_line(),
                      "l_rgb": l_rgb, "l_m": l_m, "ber": it_ber, "psnr": it_psnr})
        if log is not None:
            log(("iter={iter} distortion={distortion} l_rgb={l_rgb:.6f} "
                 "l_m={l_m:.6f} ber={ber:.4f} psnr={psnr:.2f}").format(**lines[-1]))
        if (len(ber_hist) >= config.ber_window
                and float(np.mean(ber_hist[-config.ber_window:])) <= config.target_ber):
            stopped = True
            break

    running = float(np.mean(ber_hist[-config.ber_window:]))
    final_bers = []
    final_psnrs = []
    for v, pre in zip(views, pre_renders):
        img = render(current, v.camera, background=config.background).image
        bits = codec_mod.decode_bits(codec, img)
        final_bers.append(float(np.mean(bits != message)))
        final_psnrs.append(psnr(img, pre))
    report = EmbedReport(
        iterations_run=it + 1,
        stopped_early=stopped,
        running_ber=running,
        final_ber=float(np.mean(final_bers)),
        final_psnr=float(np.mean(final_psnrs)),
        lines=lines,
    )
    return current, report


def extract(cloud: GaussianCloud, codec, cam: CameraView, m_expected=None,
            background=(0.0, 0.0, 0.0)):
    """Render the cloud from ``cam``, decode, threshold at logit 0.

    Returns (bits, ber) with ber None unless m_expected is given.
    """
    img = render(cloud, cam, background=background).image
    bits = codec_mod.decode_bits(codec, img)
    if m_expected is None:
        return bits, None
    m_expected = codec_mod.validate_message(m_expected)
    if m_expected.size != bits.size:
        raise ValueError(
            f"expected message has {m_expected.size} bits, decoder emits {bits.size}")
    return bits, float(np.mean(bits != m_expected))
