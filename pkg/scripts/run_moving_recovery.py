#!/usr/bin/env python3
"""Desk-scale dynamic recovery: a blob crosses the frame during one
compressed exposure; the transform field must pull the stamps apart.

Oracle run (defaults, seed 0): PSNR 38 dB, recovered centroids strictly
monotone along the true motion direction.
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from snapsplat.config import TrainConfig, replace
from snapsplat.metrics import FrameMetrics
from snapsplat.optim import train
from snapsplat.sci import generate_masks, modulate
from snapsplat.synth import intensity_centroid, synthesize_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iterations", type=int, default=1500)
    ap.add_argument("--out", default="results/moving")
    args = ap.parse_args()

    cfg = replace(
        TrainConfig(),
        **{
            "seed": args.seed,
            "field.depth": 4,
            "field.width": 64,
            "optim.iterations": args.iterations,
            "optim.densify_start": args.iterations // 4,
            "optim.densify_stop": args.iterations // 2,
        },
    )
    b = cfg.sci.compression_ratio
    frames, cam, motion = synthesize_dataset(
        "moving-blob", cfg.seed, b, cfg.image.width, cfg.image.height
    )
    masks = generate_masks(
        cfg.image.height, cfg.image.width, b, cfg.sci.overlap_ratio, cfg.seed
    )
    y = modulate(frames, masks)

    t0 = time.time()
    result = train(y, masks, cam, cfg, ground_truth=frames)
    elapsed = time.time() - t0

    m = FrameMetrics.compute(result.frames, frames)
    du = motion["pixels_per_frame"][0]
    centroids = [intensity_centroid(f)[0] for f in result.frames]
    steps = np.diff(centroids)
    monotone = bool(np.all(steps > 0) if du > 0 else np.all(steps < 0))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "centroids.csv", "w") as f:
        f.write("frame,recovered_x,truth_x\n")
        for i, (c, tf) in enumerate(zip(centroids, frames)):
            f.write(f"{i},{c:.3f},{intensity_centroid(tf)[0]:.3f}\n")
    print(f"iterations: {args.iterations}  time: {elapsed:.0f}s")
    print(f"psnr_mean: {m.psnr_mean:.2f} dB  ssim_mean: {m.ssim_mean:.4f}")
    print(f"true motion: {du:+.2f} px/frame  centroids monotone: {monotone}")
    print(f"log: {out / 'centroids.csv'}")


if __name__ == "__main__":
    main()
