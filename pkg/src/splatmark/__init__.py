"""Bit-string watermarking for Gaussian splat scenes.

Pipeline: train an image watermark codec once (``codec``), fit a scene
(``embed.fit_scene``), then fine-tune the scene against the frozen
decoder through 3D distortion layers (``embed.embed``) so every rendered
view decodes to the target bits (``embed.extract``).
"""

from .scene import CloudGradients, GaussianCloud
from .renderer import CameraView, RenderResult, render, render_backward
from .metrics import ber, psnr, ssim
from .distortions import DistortionPolicy, DistortionSpec, apply_distortion, sample_distortion
from .codec import (
    Codec,
    CodecConfig,
    build_codec,
    decode_bits,
    decode_image,
    encode_image,
    load_codec,
    save_codec,
    train_codec,
)
from .embed import (
    DivergenceError,
    EmbedConfig,
    FitConfig,
    ParamMask,
    TrainView,
    embed,
    extract,
    fit_scene,
    masked_update,
    rgb_loss,
    total_loss,
)
from .ply import PlyFormatError, read_ply, write_ply
from .datasets import (
    SceneDataset,
    baseline_watermark_trainset,
    load_dataset,
    make_toy_scene,
    save_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "CameraView", "CloudGradients", "Codec", "CodecConfig", "DistortionPolicy",
    "DistortionSpec", "DivergenceError", "EmbedConfig", "FitConfig",
    "GaussianCloud", "ParamMask", "PlyFormatError", "RenderResult",
    "SceneDataset", "TrainView", "apply_distortion", "baseline_watermark_trainset",
    "ber", "build_codec", "decode_bits", "decode_image", "embed", "encode_image",
    "extract", "fit_scene", "load_codec", "load_dataset", "make_toy_scene",
    "masked_update", "psnr", "read_ply", "render", "render_backward", "rgb_loss",
    "sample_distortion", "save_codec", "save_dataset", "ssim", "total_loss",
    "train_codec", "write_ply",
]
