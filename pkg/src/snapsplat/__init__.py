"""Snapshot-compressive imaging reconstruction with 3D Gaussian splatting."""

from .config import TrainConfig, dump_config, load_config
from .core import (
    Camera,
    FileFormatError,
    Gaussian,
    GaussianScene,
    InvalidParameterError,
    covariance_from_params,
    eval_sh,
    normalize_quaternion,
)
from .field import PoseStamp, TransformField, field_forward
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
from .metrics import FrameMetrics, psnr, ssim, trend_report
from .optim import TrainResult, init_scene, render_frames, train
from .raster import render
from .sci import (
    CompressedImage,
    MaskSet,
    generate_masks,
    load_masks,
    modulate,
    save_masks,
)
from .synth import camera_from_config, intensity_centroid, synthesize_dataset

__all__ = [
    "Camera",
    "Checkpoint",
    "CompressedImage",
    "FileFormatError",
    "FrameMetrics",
    "Gaussian",
    "GaussianScene",
    "InvalidParameterError",
    "MaskSet",
    "PoseStamp",
    "TrainConfig",
    "TrainResult",
    "TransformField",
    "camera_from_config",
    "covariance_from_params",
    "dump_config",
    "eval_sh",
    "field_forward",
    "generate_masks",
    "init_scene",
    "intensity_centroid",
    "load_checkpoint",
    "load_config",
    "load_frames",
    "load_image",
    "load_masks",
    "modulate",
    "normalize_quaternion",
    "psnr",
    "render",
    "render_frames",
    "save_checkpoint",
    "save_frames",
    "save_image",
    "save_masks",
    "save_preview",
    "ssim",
    "synthesize_dataset",
    "train",
    "trend_report",
]

__version__ = "0.1.0"
