"""Describe-then-detect local features with a shared cross-normalization
bridge, peakiness detection, epipolar supervision signals and MMA evaluation."""

from .tensor import Tensor, ShapeError, FormatError
from .detector import DetectorConfig, KeypointSet
from .epipolar import EpipolarModel, RewardConfig, estimate_fme, fundamental_from_pose
from .matching import mma, mutual_nn_match
from .pipeline import SCFeatModel, extract_features, toy_model

__version__ = "0.1.0"

__all__ = [
    "Tensor", "ShapeError", "FormatError", "DetectorConfig", "KeypointSet", "EpipolarModel",
    "RewardConfig", "estimate_fme", "fundamental_from_pose", "mma", "mutual_nn_match",
    "SCFeatModel", "extract_features", "toy_model",
]
