"""Anchor-free face detection with five facial landmarks.

Training-side pieces (annotation parsing, augmentation, target encoding,
losses) and inference-side pieces (backend adapters, decoding, NMS, box
voting, test-time augmentation, evaluation) share the types in ``core``.
"""

__version__ = "0.1.0"

from .core import Box, Detection, FaceAnnotation, LandmarkSet, iou
from .codec import TargetMaps, decode_single, encode_targets, gaussian_radius
from .losses import LossConfig, LossReport, focal_center_loss, total_loss
from .decoder import DecodeConfig, OutputHeads, decode_detections, extract_peaks
from .postprocess import PostConfig, box_vote, nms_greedy, tta_merge
from .backend import BackendSpec, OnnxBackend, SyntheticBackend, load_backend, preprocess
from .evaluation import average_precision, evaluate, match_detections, roc_discrete
from .pipeline import detect_image
from .estimator import CenterFaceDetector, TargetEncoder

__all__ = [
    "Box",
    "Detection",
    "FaceAnnotation",
    "LandmarkSet",
    "iou",
    "TargetMaps",
    "encode_targets",
    "decode_single",
    "gaussian_radius",
    "LossConfig",
    "LossReport",
    "focal_center_loss",
    "total_loss",
    "DecodeConfig",
    "OutputHeads",
    "decode_detections",
    "extract_peaks",
    "PostConfig",
    "nms_greedy",
    "box_vote",
    "tta_merge",
    "BackendSpec",
    "OnnxBackend",
    "SyntheticBackend",
    "load_backend",
    "preprocess",
    "match_detections",
    "average_precision",
    "roc_discrete",
    "evaluate",
    "detect_image",
    "CenterFaceDetector",
    "TargetEncoder",
]
