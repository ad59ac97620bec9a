"""Command-line surface tying the pipeline together.

Subcommands: masks, synth, encode, train, render, eval. Exit codes:
0 success, 1 validation error (bad flags, bad config, bad parameters),
2 I/O error (missing or corrupt files). Every run with the same --seed
and inputs reproduces its outputs byte for byte; --deterministic is
accepted for explicitness but the pipeline never runs any other way.
"""
import argparse
import csv
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import TrainConfig, config_from_yaml, dump_config, load_config, replace
from .core import FileFormatError, InvalidParameterError
from .formats import (
    Checkpoint,
    load_checkpoint,
    load_frames,
    load_image,
    save_checkpoint,
    save_frames,
    save_image,
    save_preview,
)
from .metrics import FrameMetrics
from .optim import render_frames, train
from .sci import CompressedImage, generate_masks, load_masks, modulate, save_masks
from .synth import PRESETS, camera_from_config, synthesize_dataset


class _UsageError(InvalidParameterError):
    pass


class _Parser(argparse.ArgumentParser):
    # surface bad flags as exit code 1, not argparse's default 2
    def error(self, message):
        raise _UsageError(message)


def _add_global_flags(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=d, help="override the config seed")
    parser.add_argument(
        "--deterministic",
        action="store_true",
        default=d if suppress else False,
        help="bit-reproducible mode (always on; flag kept for explicitness)",
    )
    parser.add_argument(
        "--config", default=d, metavar="PATH", help="YAML config file"
    )
    parser.add_argument(
        "--out", default=d if suppress else ".", metavar="DIR", help="output directory"
    )


def build_parser():
    parser = _Parser(prog="snapsplat", description=__doc__.splitlines()[0])
    _add_global_flags(parser, suppress=False)
    shared = _Parser(add_help=False)
    _add_global_flags(shared, suppress=True)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("masks", parents=[shared], help="generate an exposure mask set")
    p.add_argument("--frames", type=int, default=None, help="mask count (default: config)")
    p.add_argument("--overlap", type=float, default=None, help="overlap ratio (default: config)")

    p = sub.add_parser("synth", parents=[shared], help="render a ground-truth burst")
    p.add_argument("--preset", required=True, help=f"one of: {', '.join(PRESETS)}")
    p.add_argument("--frames", type=int, default=None, help="burst length (default: config)")

    p = sub.add_parser("encode", parents=[shared], help="compress a burst into one exposure")
    p.add_argument("--frames", required=True, metavar="DIR", help="directory of frame_*.scif")
    p.add_argument("--masks", default=None, metavar="PATH", help="mask file (default: generate)")
    p.add_argument("--overlap", type=float, default=None, help="overlap ratio when generating")

    p = sub.add_parser("train", parents=[shared], help="recover scene and frames")
    p.add_argument("--input", required=True, metavar="PATH", help="compressed image (.scif)")
    p.add_argument("--masks", required=True, metavar="PATH", help="mask file (.scim)")
    p.add_argument("--truth", default=None, metavar="DIR", help="ground-truth frames for the metrics log")

    p = sub.add_parser("render", parents=[shared], help="render one stamp from a checkpoint")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--stamp", type=int, required=True, help="stamp index in [0, B)")

    p = sub.add_parser("eval", parents=[shared], help="score recovered frames against truth")
    p.add_argument("--recovered", required=True, metavar="DIR")
    p.add_argument("--truth", required=True, metavar="DIR")

    return parser


def _resolve_config(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg.validate()
    return cfg


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_metrics_csv(path, rows, with_psnr):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "loss", "psnr"] if with_psnr else ["iteration", "loss"])
        for it, loss, ps in rows:
            w.writerow([it, f"{loss:.6f}", f"{ps:.4f}"] if with_psnr else [it, f"{loss:.6f}"])


def _cmd_masks(args):
    cfg = _resolve_config(args)
    out = _out_dir(args)
    b = cfg.sci.compression_ratio if args.frames is None else args.frames
    overlap = cfg.sci.overlap_ratio if args.overlap is None else args.overlap
    mask_set = generate_masks(cfg.image.height, cfg.image.width, b, overlap, cfg.seed)
    save_masks(mask_set, out / "masks.scim")
    save_preview(out / "masks_preview.png", mask_set.masks.mean(axis=0))
    print(f"wrote {out / 'masks.scim'} ({b} masks, overlap {overlap})")


def _cmd_synth(args):
    cfg = _resolve_config(args)
    out = _out_dir(args)
    b = cfg.sci.compression_ratio if args.frames is None else args.frames
    frames, cam, motion = synthesize_dataset(
        args.preset,
        cfg.seed,
        b,
        cfg.image.width,
        cfg.image.height,
        focal=cfg.cam.focal,
        distance=cfg.cam.distance,
        jitter=cfg.cam.jitter,
    )
    save_frames(out / "frames", frames)
    for i, frame in enumerate(frames):
        save_preview(out / "frames" / f"frame_{i:03d}.png", frame)
    meta = {
        "preset": args.preset,
        "seed": cfg.seed,
        "frame_count": b,
        "width": cfg.image.width,
        "height": cfg.image.height,
        "camera": {
            "focal": cfg.cam.focal,
            "distance": cfg.cam.distance,
            "jitter": cfg.cam.jitter,
        },
        "motion": motion,
    }
    (out / "meta.yaml").write_text(yaml.safe_dump(meta, sort_keys=True))
    print(f"wrote {b} frames to {out / 'frames'} (preset {args.preset})")


def _cmd_encode(args):
    cfg = _resolve_config(args)
    out = _out_dir(args)
    frames = load_frames(args.frames)
    b, h, w, _ = frames.shape
    if args.masks is not None:
        mask_set = load_masks(args.masks)
        if mask_set.frame_count != b:
            raise InvalidParameterError(
                f"mask count {mask_set.frame_count} does not match {b} frames"
            )
        if mask_set.shape != (h, w):
            raise InvalidParameterError(
                f"mask shape {mask_set.shape} does not match frames {(h, w)}"
            )
    else:
        overlap = cfg.sci.overlap_ratio if args.overlap is None else args.overlap
        mask_set = generate_masks(h, w, b, overlap, cfg.seed)
        save_masks(mask_set, out / "masks.scim")
    compressed = modulate(frames, mask_set, cfg.sci.noise_sigma)
    save_image(out / "compressed.scif", compressed.pixels)
    save_preview(out / "compressed_preview.png", compressed.pixels, scale=b)
    print(f"wrote {out / 'compressed.scif'} (B={b})")


def _cmd_train(args):
    cfg = _resolve_config(args)
    out = _out_dir(args)
    y = CompressedImage(load_image(args.input), cfg.sci.compression_ratio)
    mask_set = load_masks(args.masks)
    truth = load_frames(args.truth) if args.truth else None
    cam = camera_from_config(cfg)
    config_echo = dump_config(cfg)

    def checkpoint_cb(it, scene, field, scene_state, field_state):
        ck = Checkpoint(scene, field, scene_state, field_state, it, config_echo)
        save_checkpoint(out / f"checkpoint_{it:06d}.scig", ck)

    result = train(
        y,
        mask_set,
        cam,
        cfg,
        ground_truth=truth,
        checkpoint_cb=checkpoint_cb if cfg.io.checkpoint_every else None,
    )
    final = Checkpoint(
        result.scene,
        result.field,
        result.scene_state,
        result.field_state,
        cfg.optim.iterations,
        config_echo,
    )
    save_checkpoint(out / "checkpoint.scig", final)
    save_frames(out / "recovered", result.frames)
    for i, frame in enumerate(result.frames):
        save_preview(out / "recovered" / f"frame_{i:03d}.png", frame)
    _write_metrics_csv(out / "metrics.csv", result.metrics, with_psnr=truth is not None)
    last = result.metrics[-1][1] if result.metrics else float("nan")
    print(f"wrote {out / 'checkpoint.scig'} (final loss {last:.6f})")


def _cmd_render(args):
    out = _out_dir(args)
    ck = load_checkpoint(args.checkpoint)
    cfg = config_from_yaml(ck.config_text)
    b = cfg.sci.compression_ratio
    if not 0 <= args.stamp < b:
        raise InvalidParameterError(f"stamp must lie in [0, {b})")
    cam = camera_from_config(cfg)
    frames = render_frames(ck.scene, ck.field, b, cam, cfg)
    save_image(out / f"render_{args.stamp:03d}.scif", frames[args.stamp])
    save_preview(out / f"render_{args.stamp:03d}.png", frames[args.stamp])
    print(f"wrote {out / f'render_{args.stamp:03d}.scif'}")


def _cmd_eval(args):
    out = _out_dir(args)
    recovered = load_frames(args.recovered)
    truth = load_frames(args.truth)
    m = FrameMetrics.compute(recovered, truth)
    with open(out / "metrics.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "psnr", "ssim"])
        for i, (p, s) in enumerate(zip(m.per_frame_psnr, m.per_frame_ssim)):
            w.writerow([i, f"{p:.4f}", f"{s:.4f}"])
        w.writerow(["mean", f"{m.psnr_mean:.4f}", f"{m.ssim_mean:.4f}"])
    print(f"psnr_mean={m.psnr_mean:.4f} ssim_mean={m.ssim_mean:.4f}")


_COMMANDS = {
    "masks": _cmd_masks,
    "synth": _cmd_synth,
    "encode": _cmd_encode,
    "train": _cmd_train,
    "render": _cmd_render,
    "eval": _cmd_eval,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        _COMMANDS[args.command](args)
        return 0
    except FileFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InvalidParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
