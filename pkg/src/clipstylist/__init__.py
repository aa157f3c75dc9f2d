"""Scenario-aware clothes-style-transfer person video generation at desk scale."""

from .data import ClipSample, DatasetError, DatasetManifest, generate_synthetic_dataset, load_clip, normalize_frame
from .decoder import GeneratorOutput, SharedDecoder, composite
from .discriminators import Discriminators, crop_region
from .encoders import AttentionBlock, ClothesEncoder, IdentityEncoder, PoseEncoder, random_geometric_transform
from .estimator import ClothesVideoGenerator
from .features import SeededFeatureExtractor, SeededVideoExtractor
from .generator import Generator
from .losses import LossBreakdown, LossWeights, total_loss
from .metrics import MetricReport, fid, frechet_distance, fvd, psnr, ssim
from .training import TrainConfig, TrainState, load_checkpoint, save_checkpoint, train, train_step

__version__ = "0.1.0"

__all__ = [
    "AttentionBlock",
    "ClipSample",
    "ClothesEncoder",
    "ClothesVideoGenerator",
    "DatasetError",
    "DatasetManifest",
    "Discriminators",
    "Generator",
    "GeneratorOutput",
    "IdentityEncoder",
    "LossBreakdown",
    "LossWeights",
    "MetricReport",
    "PoseEncoder",
    "SeededFeatureExtractor",
    "SeededVideoExtractor",
    "SharedDecoder",
    "TrainConfig",
    "TrainState",
    "composite",
    "crop_region",
    "fid",
    "frechet_distance",
    "fvd",
    "generate_synthetic_dataset",
    "load_checkpoint",
    "load_clip",
    "normalize_frame",
    "psnr",
    "random_geometric_transform",
    "save_checkpoint",
    "ssim",
    "total_loss",
    "train",
    "train_step",
]
