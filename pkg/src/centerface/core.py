"""Geometry value types shared by every stage of the pipeline.

Coordinates are float pixels in the image frame: origin top-left, x to the
right, y down. Boxes use the corner convention ``(x1, y1, x2, y2)`` and IoU is
computed on continuous geometry (no ``+1`` pixel inclusivity).

Dense planes (heatmaps, regression maps, images) are plain ``numpy`` arrays
laid out as ``(channels, height, width)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

NUM_LANDMARKS = 5
LANDMARK_NAMES = ("left_eye", "right_eye", "nose", "left_mouth", "right_mouth")
# index permutation applied to landmarks under a horizontal mirror
FLIP_PERMUTATION = (1, 0, 2, 4, 3)


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"box coordinate {name} is not finite: {value}")
            object.__setattr__(self, name, value)
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"invalid box corners: {self.as_tuple()}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        return cls(x, y, x + w, y + h)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class LandmarkSet:
    """Five facial points in fixed order (see ``LANDMARK_NAMES``).

    Points flagged invalid carry no coordinate meaning and are excluded from
    every loss and every vote.
    """

    points: tuple[tuple[float, float], ...]
    valid: tuple[bool, ...] = (True,) * NUM_LANDMARKS

    def __post_init__(self):
        points = tuple((float(x), float(y)) for x, y in self.points)
        valid = tuple(bool(v) for v in self.valid)
        if len(points) != NUM_LANDMARKS or len(valid) != NUM_LANDMARKS:
            raise ValueError(f"expected {NUM_LANDMARKS} landmarks, got {len(points)} points / {len(valid)} flags")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def missing(cls) -> "LandmarkSet":
        return cls(((0.0, 0.0),) * NUM_LANDMARKS, (False,) * NUM_LANDMARKS)

    @classmethod
    def from_array(cls, points, valid=None) -> "LandmarkSet":
        arr = np.asarray(points, dtype=np.float64).reshape(NUM_LANDMARKS, 2)
        if valid is None:
            valid = (True,) * NUM_LANDMARKS
        return cls(tuple(map(tuple, arr.tolist())), tuple(valid))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)

    @property
    def any_valid(self) -> bool:
        return any(self.valid)


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float
    landmarks: LandmarkSet = field(default_factory=LandmarkSet.missing)

    def __post_init__(self):
        score = float(self.score)
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {score}")
        object.__setattr__(self, "score", score)


@dataclass(frozen=True)
class FaceAnnotation:
    """Ground-truth face: box, five landmarks and a whole-face landmark flag."""

    box: Box
    landmarks: LandmarkSet = field(default_factory=LandmarkSet.missing)
    landmark_valid: bool = False

    @classmethod
    def from_box(cls, x1, y1, x2, y2, landmarks=None) -> "FaceAnnotation":
        if landmarks is None:
            return cls(Box(x1, y1, x2, y2))
        lms = landmarks if isinstance(landmarks, LandmarkSet) else LandmarkSet.from_array(landmarks)
        return cls(Box(x1, y1, x2, y2), lms, lms.any_valid)


def box_center(b: Box) -> tuple[float, float]:
    return ((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when the union has no area."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


def boxes_to_array(boxes: Iterable[Box]) -> np.ndarray:
    out = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return out.reshape(-1, 4)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between two ``(n, 4)`` / ``(m, 4)`` corner arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return np.minimum(out, 1.0)


def flip_landmarks(lms: LandmarkSet, width: float) -> LandmarkSet:
    """Mirror landmarks about ``x = width / 2`` and swap left/right indices."""
    pts = lms.as_array()
    pts[:, 0] = width - pts[:, 0]
    order = list(FLIP_PERMUTATION)
    return LandmarkSet.from_array(pts[order], [lms.valid[i] for i in order])


def flip_box(b: Box, width: float) -> Box:
    return Box(width - b.x2, b.y1, width - b.x1, b.y2)


def detections_to_arrays(dets: Sequence[Detection]):
    """Pack detections into ``(boxes (n,4), scores (n,), lms (n,5,2), valid (n,5))``."""
    n = len(dets)
    boxes = np.empty((n, 4))
    scores = np.empty(n)
    lms = np.empty((n, NUM_LANDMARKS, 2))
    valid = np.empty((n, NUM_LANDMARKS), dtype=bool)
    for i, d in enumerate(dets):
        boxes[i] = d.box.as_tuple()
        scores[i] = d.score
        lms[i] = d.landmarks.points
        valid[i] = d.landmarks.valid
    return boxes, scores, lms, valid
