"""Synthetic scenes, dataset persistence, and text/image file formats.

A dataset directory holds the generating cloud (scene.ply), per-split
camera files, and 8-bit PNG ground-truth images:

    scene.ply  cameras_train.txt  cameras_holdout.txt
    train_000.png ...  holdout_000.png ...  meta.txt

Cameras are one view per text line: fx fy cx cy W H followed by the 12
entries of the world-to-camera [R|t] matrix, row-major.  Configs and
metadata are flat key=value text.  Images are stored as 8-bit PNG, so
files quantize to 1/255 steps; in-memory pipelines keep float precision
and PSNR measured against files reflects the quantization.

The toy scene places random colored Gaussians in a unit box with
cameras on a ring looking at the origin; ground truth is rendered from
the cloud itself, so fitting has an exact optimum and rendering the
generating cloud reproduces the dataset exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .codec import encode_image, validate_message
from .embed import TrainView
from .renderer import CameraView, render
from .scene import GaussianCloud
from .sh import SH_C0

GENERATOR_VERSION = 1


# --- images ------------------------------------------------------------------

def save_image(path, image):
    """Write a float [0,1] HxWx3 image as 8-bit PNG (values quantize to 1/255)."""
    arr = np.asarray(image, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {arr.shape}")
    quant = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quant, mode="RGB").save(path)


def load_image(path):
    """Read an image file to float [0,1] HxWx3."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=float)
    return arr / 255.0


# --- cameras -----------------------------------------------------------------

def write_cameras(path, cams):
    lines = ["# fx fy cx cy width height  w2c row-major 3x4"]
    for cam in cams:
        pose = np.asarray(cam.T_wc, dtype=float)[:3, :4].reshape(-1)
        nums = [cam.fx, cam.fy, cam.cx, cam.cy, float(cam.width), float(cam.height)]
        nums += pose.tolist()
        lines.append(" ".join(f"{v:.17g}" for v in nums))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_cameras(path):
    cams = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(tok) for tok in line.split()]
            if len(vals) != 18:
                raise ValueError(f"{path}:{ln}: camera line needs 18 numbers, got {len(vals)}")
            t_wc = np.eye(4)
            t_wc[:3, :4] = np.array(vals[6:]).reshape(3, 4)
            cams.append(CameraView(fx=vals[0], fy=vals[1], cx=vals[2], cy=vals[3],
                                   width=int(vals[4]), height=int(vals[5]), T_wc=t_wc))
    return cams


# --- flat key=value config ----------------------------------------------------

def parse_value(text: str):
    """int, then float, then bool, else the raw string."""
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def read_config(path) -> dict:
    out = {}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, val = line.split("=", 1)
            out[key.strip()] = parse_value(val.strip())
    return out


def write_config(path, values: dict):
    with open(path, "w") as f:
        for key, val in values.items():
            f.write(f"{key}={val}\n")


# --- datasets ------------------------------------------------------------------

@dataclass
class SceneDataset:
    train: list
    holdout: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        views = self.train + self.holdout
        if not views:
            raise ValueError("dataset has no views")
        dims = {(v.camera.height, v.camera.width) for v in views}
        if len(dims) != 1:
            raise ValueError(f"views disagree on image dims: {sorted(dims)}")
        for tv in self.train:
            for hv in self.holdout:
                if np.allclose(tv.camera.T_wc, hv.camera.T_wc):
                    raise ValueError("train/holdout splits share a camera pose")


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera 4x4: camera at position, +z toward target, y down."""
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        right = np.cross(forward, (0.0, 1.0, 0.0))
        nr = np.linalg.norm(right)
    right = right / nr
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    t_wc = np.eye(4)
    t_wc[:3, :3] = rot
    t_wc[:3, 3] = -rot @ position
    return t_wc


def _ring_camera(angle, image_size, radius=2.2, height=0.8):
    pos = (radius * np.cos(angle), radius * np.sin(angle), height)
    f = 1.2 * image_size
    c = image_size / 2.0
    return CameraView(fx=f, fy=f, cx=c, cy=c, width=image_size,
                      height=image_size, T_wc=look_at(pos, (0.0, 0.0, 0.0)))


def random_cloud(rng, n_gaussians, sh_order=1) -> GaussianCloud:
    """Random colored Gaussians filling the unit box around the origin."""
    n = n_gaussians
    n_bases = (sh_order + 1) ** 2
    sh = np.zeros((n, 3, n_bases))
    sh[:, :, 0] = (rng.uniform(0.05, 0.95, size=(n, 3)) - 0.5) / SH_C0
    if n_bases > 1:
        sh[:, :, 1:] = rng.normal(0.0, 0.08, size=(n, 3, n_bases - 1))
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    return GaussianCloud(
        mu=rng.uniform(-0.45, 0.45, size=(n, 3)),
        scale_log=np.log(rng.uniform(0.03, 0.09, size=(n, 3))),
        rot_raw=rot,
        opacity_logit=rng.uniform(0.5, 2.5, size=n),
        sh=sh,
        sh_order=sh_order,
    )


def perturb_cloud(cloud: GaussianCloud, sigma, rng) -> GaussianCloud:
    """Additive Gaussian jitter on every raw field; a fitting start point."""
    out = cloud.copy()
    out.mu = out.mu + rng.normal(0.0, sigma, size=out.mu.shape)
    out.scale_log = out.scale_log + rng.normal(0.0, sigma, size=out.scale_log.shape)
    out.rot_raw = out.rot_raw + rng.normal(0.0, sigma, size=out.rot_raw.shape)
    out.opacity_logit = out.opacity_logit + rng.normal(0.0, sigma, size=out.opacity_logit.shape)
    out.sh = out.sh + rng.normal(0.0, sigma, size=out.sh.shape)
    return out


def make_toy_scene(seed, n_gaussians=300, n_views=8, image_size=64,
                   sh_order=1, n_holdout=2):
    """Random cloud + ring cameras; ground truth rendered from the cloud."""
    if n_gaussians < 1:
        raise ValueError("n_gaussians must be >= 1")
    if n_views < 2:
        raise ValueError("n_views must be >= 2")
    rng = np.random.default_rng(seed)
    cloud = random_cloud(rng, n_gaussians, sh_order)

    def view_at(angle):
        cam = _ring_camera(angle, image_size)
        return TrainView(camera=cam, image=render(cloud, cam).image)

    train = [view_at(2 * np.pi * i / n_views) for i in range(n_views)]
    # Holdout poses sit halfway between neighboring train poses.
    holdout = [view_at(2 * np.pi * (i + 0.5) / n_views) for i in range(n_holdout)]
    meta = {"seed": seed, "version": GENERATOR_VERSION, "n_gaussians": n_gaussians,
            "n_views": n_views, "image_size": image_size, "sh_order": sh_order}
    return cloud, SceneDataset(train=train, holdout=holdout, metadata=meta)


def save_dataset(dirpath, dataset: SceneDataset, cloud: GaussianCloud = None):
    from .ply import write_ply

    os.makedirs(dirpath, exist_ok=True)
    if cloud is not None:
        write_ply(cloud, os.path.join(dirpath, "scene.ply"))
    for split, views in (("train", dataset.train), ("holdout", dataset.holdout)):
        write_cameras(os.path.join(dirpath, f"cameras_{split}.txt"),
                      [v.camera for v in views])
        for i, v in enumerate(views):
            save_image(os.path.join(dirpath, f"{split}_{i:03d}.png"), v.image)
    write_config(os.path.join(dirpath, "meta.txt"), dataset.metadata)


def load_dataset(dirpath) -> SceneDataset:
    views = {}
    for split in ("train", "holdout"):
        cams_path = os.path.join(dirpath, f"cameras_{split}.txt")
        if split == "train" and not os.path.exists(cams_path):
            raise FileNotFoundError(f"no cameras_train.txt in {dirpath}")
        cams = read_cameras(cams_path) if os.path.exists(cams_path) else []
        views[split] = [
            TrainView(camera=cam,
                      image=load_image(os.path.join(dirpath, f"{split}_{i:03d}.png")))
            for i, cam in enumerate(cams)
        ]
    meta_path = os.path.join(dirpath, "meta.txt")
    meta = read_config(meta_path) if os.path.exists(meta_path) else {}
    return SceneDataset(train=views["train"], holdout=views["holdout"], metadata=meta)


def baseline_watermark_trainset(codec, dataset: SceneDataset, message) -> SceneDataset:
    """Replace every training image with its watermarked encoding.

    This is the naive approach of watermarking the training set and
    fitting a scene to it; the scene's renders then fail to decode,
    which the baseline experiment demonstrates.
    """
    message = validate_message(message)
    if message.size != codec.message_len:
        raise ValueError(
            f"message has {message.size} bits, codec expects {codec.message_len}")
    train = [TrainView(camera=v.camera, image=encode_image(codec, v.image, message)[0])
             for v in dataset.train]
    meta = dict(dataset.metadata)
    meta["watermarked"] = True
    return SceneDataset(train=train, holdout=list(dataset.holdout), metadata=meta)
