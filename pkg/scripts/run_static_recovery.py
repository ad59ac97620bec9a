#!/usr/bin/env python3
"""Desk-scale static recovery: compress a static burst, recover it,
report PSNR/SSIM against the ground truth.

Oracle run (defaults, seed 0): PSNR 47.8 dB, SSIM 0.999 in about a
minute on a desktop CPU.
"""
import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from snapsplat.config import TrainConfig, replace
from snapsplat.metrics import FrameMetrics
from snapsplat.optim import train
from snapsplat.sci import generate_masks, modulate
from snapsplat.synth import synthesize_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iterations", type=int, default=1500)
    ap.add_argument("--overlap", type=float, default=0.25)
    ap.add_argument("--out", default="results/static")
    args = ap.parse_args()

    cfg = replace(
        TrainConfig(),
        **{
            "seed": args.seed,
            "sci.overlap_ratio": args.overlap,
            "field.depth": 4,
            "field.width": 64,
            "optim.iterations": args.iterations,
            "optim.densify_start": args.iterations // 4,
            "optim.densify_stop": args.iterations // 2,
        },
    )
    b = cfg.sci.compression_ratio
    frames, cam, _ = synthesize_dataset(
        "static-blobs", cfg.seed, b, cfg.image.width, cfg.image.height
    )
    masks = generate_masks(cfg.image.height, cfg.image.width, b, args.overlap, cfg.seed)
    y = modulate(frames, masks)

    t0 = time.time()
    result = train(y, masks, cam, cfg, ground_truth=frames)
    elapsed = time.time() - t0

    m = FrameMetrics.compute(result.frames, frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w") as f:
        f.write("iteration,loss,psnr\n")
        for it, loss, ps in result.metrics:
            f.write(f"{it},{loss:.6f},{ps:.4f}\n")
    print(f"iterations: {args.iterations}  time: {elapsed:.0f}s")
    print(f"psnr_mean: {m.psnr_mean:.2f} dB  ssim_mean: {m.ssim_mean:.4f}")
    print(f"gaussians: {len(result.scene)}  log: {out / 'metrics.csv'}")


if __name__ == "__main__":
    main()
