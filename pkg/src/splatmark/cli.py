"""Command-line pipeline around the library.

Subcommands cover the full flow: gen-scene, fit, train-codec, embed,
extract, distort, render, evaluate, baseline-trainset.  Every command
accepts --seed and --config (flat key=value file whose keys match the
command's long option names; explicit flags win).  Metrics go to stdout
as key=value lines; errors go to stderr with a non-zero exit status.

Cameras are addressed as PATH or PATH:INDEX into a cameras text file.
Messages are given as 0/1 strings or hex (0x prefix).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import codec as codec_mod
from . import datasets, ply
from .distortions import DistortionPolicy, DistortionSpec, apply_distortion
from .embed import EmbedConfig, FitConfig, ParamMask, embed, extract, fit_scene
from .metrics import psnr, ssim
from .renderer import render


def _camera_arg(text):
    """PATH or PATH:INDEX -> (path, index)."""
    path, sep, idx = text.rpartition(":")
    if sep and idx.lstrip("-").isdigit() and path:
        return path, int(idx)
    return text, 0


def _load_camera(text):
    path, idx = _camera_arg(text)
    cams = datasets.read_cameras(path)
    if not -len(cams) <= idx < len(cams):
        raise ValueError(f"camera index {idx} out of range, {path} has {len(cams)}")
    return cams[idx]


def _background(text):
    vals = [float(v) for v in text.split(",")]
    if len(vals) == 1:
        vals = vals * 3
    if len(vals) != 3:
        raise ValueError(f"background needs 1 or 3 comma-separated values, got {text!r}")
    return tuple(vals)


def _mask_arg(text) -> ParamMask:
    if text == "all":
        return ParamMask.all_fields()
    return ParamMask.only(*[t.strip() for t in text.split(",") if t.strip()])


def _emit(**kv):
    for key, val in kv.items():
        if isinstance(val, float):
            print(f"{key}={val:.6g}")
        else:
            print(f"{key}={val}")


def _report_writer(path):
    if path is None:
        return None, lambda: None
    f = open(path, "w")
    return (lambda line: f.write(line + "\n")), f.close


# --- commands ---------------------------------------------------------------

def cmd_gen_scene(args):
    cloud, dataset = datasets.make_toy_scene(
        seed=args.seed, n_gaussians=args.n_gaussians, n_views=args.n_views,
        image_size=args.image_size, sh_order=args.sh_order)
    datasets.save_dataset(args.out, dataset, cloud)
    _emit(out=args.out, n_gaussians=cloud.n, n_views=len(dataset.train),
          n_holdout=len(dataset.holdout), image_size=args.image_size)
    return 0


def cmd_fit(args):
    dataset = datasets.load_dataset(args.data)
    if args.init:
        init = ply.read_ply(args.init)
    else:
        scene_path = os.path.join(args.data, "scene.ply")
        rng = np.random.default_rng(args.seed)
        init = datasets.perturb_cloud(ply.read_ply(scene_path), args.perturb, rng)
    config = FitConfig(lr=args.lr, n_iters=args.iters, beta=args.beta,
                       seed=args.seed, background=_background(args.bg))
    fitted, report = fit_scene(dataset.train, init, config)
    ply.write_ply(fitted, args.out)
    _emit(out=args.out, iterations=report.iterations_run, final_psnr=report.final_psnr)
    return 0


def cmd_train_codec(args):
    config = codec_mod.CodecConfig(
        message_len=args.bits, image_size=args.image_size, channels=args.channels,
        epochs=args.epochs, batch_size=args.batch, corpus_size=args.corpus_size,
        lr=args.lr, loss_weight=args.loss_weight, seed=args.seed)
    log, close = _report_writer(args.report)
    try:
        codec, report = codec_mod.train_codec(config, log=log)
    finally:
        close()
    codec_mod.save_codec(args.out, codec)
    _emit(out=args.out, epochs_run=report.epochs_run, final_mse=report.final_mse,
          final_bce=report.final_bce, holdout_ber=report.holdout_ber)
    return 0


def cmd_embed(args):
    cloud = ply.read_ply(args.ply)
    codec = codec_mod.load_codec(args.codec)
    dataset = datasets.load_dataset(args.data)
    message = codec_mod.parse_message(args.message, codec.message_len)
    kinds = ("identity",) if args.no_distortions else DistortionPolicy().kinds
    policy = DistortionPolicy(kinds=kinds, sigma=args.sigma, p=args.p)
    config = EmbedConfig(gamma=args.gamma, beta=args.beta, lr=args.lr,
                         n_iters=args.iters, policy=policy,
                         target_ber=args.target_ber, seed=args.seed,
                         background=_background(args.bg))
    log, close = _report_writer(args.report)
    try:
        out_cloud, report = embed(cloud, codec, message, dataset.train,
                                  _mask_arg(args.mask), config, log=log)
    finally:
        close()
    ply.write_ply(out_cloud, args.out)
    _emit(out=args.out, iterations=report.iterations_run,
          stopped_early=report.stopped_early, final_ber=report.final_ber,
          final_psnr=report.final_psnr)
    return 0


def cmd_extract(args):
    cloud = ply.read_ply(args.ply)
    codec = codec_mod.load_codec(args.decoder)
    cam = _load_camera(args.camera)
    expected = None
    if args.expect is not None:
        expected = codec_mod.parse_message(args.expect, codec.message_len)
    bits, ber_val = extract(cloud, codec, cam, expected,
                            background=_background(args.bg))
    _emit(bits="".join(str(b) for b in bits),
          hex=codec_mod.message_to_hex(bits))
    if ber_val is not None:
        print(f"ber={ber_val:.4f}")
    return 0


def cmd_distort(args):
    cloud = ply.read_ply(args.input)
    spec = DistortionSpec(kind=args.kind, sigma=args.sigma, p=args.p,
                          spatial=args.spatial, seed=args.seed)
    out, _ = apply_distortion(cloud, spec)
    ply.write_ply(out, args.output)
    _emit(kind=spec.to_line(), n_in=cloud.n, n_out=out.n, out=args.output)
    return 0


def cmd_render(args):
    cloud = ply.read_ply(args.ply)
    cam = _load_camera(args.camera)
    result = render(cloud, cam, background=_background(args.bg))
    datasets.save_image(args.out, result.image)
    _emit(out=args.out, clamp_fraction=result.clamp_fraction)
    return 0


def cmd_evaluate(args):
    cloud = ply.read_ply(args.ply)
    dataset = datasets.load_dataset(args.data)
    views = dataset.train if args.split == "train" else dataset.holdout
    if not views:
        raise ValueError(f"dataset has no {args.split} views")
    codec = codec_mod.load_codec(args.codec) if args.codec else None
    expected = None
    if args.expect is not None:
        if codec is None:
            raise ValueError("--expect requires --codec")
        expected = codec_mod.parse_message(args.expect, codec.message_len)
    bg = _background(args.bg)
    psnrs, ssims, bers = [], [], []
    for view in views:
        img = render(cloud, view.camera, background=bg).image
        psnrs.append(psnr(img, view.image))
        ssims.append(ssim(img, view.image)[0])
        if expected is not None:
            bits = codec_mod.decode_bits(codec, img)
            bers.append(float(np.mean(bits != expected)))
    _emit(split=args.split, n_views=len(views),
          psnr=float(np.mean(psnrs)), ssim=float(np.mean(ssims)))
    if bers:
        print(f"ber={float(np.mean(bers)):.4f}")
    return 0


def cmd_baseline_trainset(args):
    dataset = datasets.load_dataset(args.data)
    codec = codec_mod.load_codec(args.codec)
    message = codec_mod.parse_message(args.message, codec.message_len)
    out_ds = datasets.baseline_watermark_trainset(codec, dataset, message)
    scene_path = os.path.join(args.data, "scene.ply")
    cloud = ply.read_ply(scene_path) if os.path.exists(scene_path) else None
    datasets.save_dataset(args.out, out_ds, cloud)
    bers = [float(np.mean(codec_mod.decode_bits(codec, v.image) != message))
            for v in out_ds.train]
    _emit(out=args.out, n_views=len(out_ds.train), pre_fit_ber=float(np.mean(bers)))
    return 0


# --- parser -----------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="splatmark",
        description="Embed and extract bit-string watermarks in Gaussian splat scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, configure):
        p = sub.add_parser(name)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="flat key=value defaults file")
        configure(p)
        p.set_defaults(func=func)
        return p

    def gen_scene_args(p):
        p.add_argument("--out", required=True)
        p.add_argument("--n-gaussians", type=int, default=300)
        p.add_argument("--n-views", type=int, default=8)
        p.add_argument("--image-size", type=int, default=64)
        p.add_argument("--sh-order", type=int, default=1)

    def fit_args(p):
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--init", default=None, help="starting cloud; default perturbs scene.ply")
        p.add_argument("--perturb", type=float, default=0.02)
        p.add_argument("--iters", type=int, default=500)
        p.add_argument("--lr", type=float, default=0.01)
        p.add_argument("--beta", type=float, default=0.2)
        p.add_argument("--bg", default="0")

    def train_codec_args(p):
        p.add_argument("--out", required=True)
        p.add_argument("--bits", type=int, default=16)
        p.add_argument("--image-size", type=int, default=64)
        p.add_argument("--channels", type=int, default=16)
        p.add_argument("--epochs", type=int, default=50)
        p.add_argument("--batch", type=int, default=8)
        p.add_argument("--corpus-size", type=int, default=512)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--loss-weight", type=float, default=1.0)
        p.add_argument("--report", default=None)

    def embed_args(p):
        p.add_argument("--ply", required=True)
        p.add_argument("--codec", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--message", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--mask", default="all")
        p.add_argument("--gamma", type=float, default=0.3)
        p.add_argument("--beta", type=float, default=0.2)
        p.add_argument("--lr", type=float, default=0.005)
        p.add_argument("--iters", type=int, default=2000)
        p.add_argument("--target-ber", type=float, default=0.0)
        p.add_argument("--sigma", type=float, default=0.01)
        p.add_argument("--p", type=float, default=0.10)
        p.add_argument("--no-distortions", action="store_true")
        p.add_argument("--bg", default="0")
        p.add_argument("--report", default=None)

    def extract_args(p):
        p.add_argument("--ply", required=True)
        p.add_argument("--decoder", required=True)
        p.add_argument("--camera", required=True, help="cameras file, or FILE:INDEX")
        p.add_argument("--expect", default=None)
        p.add_argument("--bg", default="0")

    def distort_args(p):
        p.add_argument("input")
        p.add_argument("output")
        p.add_argument("--kind", required=True,
                       choices=("identity", "gn", "dropout", "crop"))
        p.add_argument("--sigma", type=float, default=0.01)
        p.add_argument("--p", type=float, default=0.10)
        p.add_argument("--spatial", action="store_true")

    def render_args(p):
        p.add_argument("--ply", required=True)
        p.add_argument("--camera", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--bg", default="0")

    def evaluate_args(p):
        p.add_argument("--ply", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--split", default="train", choices=("train", "holdout"))
        p.add_argument("--codec", default=None)
        p.add_argument("--expect", default=None)
        p.add_argument("--bg", default="0")

    def baseline_args(p):
        p.add_argument("--data", required=True)
        p.add_argument("--codec", required=True)
        p.add_argument("--message", required=True)
        p.add_argument("--out", required=True)

    add("gen-scene", cmd_gen_scene, gen_scene_args)
    add("fit", cmd_fit, fit_args)
    add("train-codec", cmd_train_codec, train_codec_args)
    add("embed", cmd_embed, embed_args)
    add("extract", cmd_extract, extract_args)
    add("distort", cmd_distort, distort_args)
    add("render", cmd_render, render_args)
    add("evaluate", cmd_evaluate, evaluate_args)
    add("baseline-trainset", cmd_baseline_trainset, baseline_args)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        # Config supplies defaults for this subcommand; explicit flags win,
        # so re-parse after installing the file's values as defaults.
        overrides = {k.replace("-", "_"): v
                     for k, v in datasets.read_config(args.config).items()}
        sub = next(a for a in parser._actions
                   if isinstance(a, argparse._SubParsersAction))
        subparser = sub.choices[args.command]
        valid = {a.dest for a in subparser._actions}
        subparser.set_defaults(**{k: v for k, v in overrides.items() if k in valid})
        args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # argparse errors exit on their own
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
