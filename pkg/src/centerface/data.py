"""Annotation parsers, image loading and training-time augmentation.

Two text layouts are supported.

WIDER FACE ``*_bbx_gt.txt``::

    0--Parade/0_Parade_marchingband_1_849.jpg
    1
    449 330 122 149 0 0 0 0 0 0

A path line, a face-count line, then one line per face whose first four
integers are ``x y w h`` (remaining attribute columns are ignored). A count of
0 is followed by a single all-zero line.

RetinaFace ``label.txt``::

    # 0--Parade/0_Parade_marchingband_1_849.jpg
    449 330 122 149 488.906 373.643 0.0 542.089 376.442 0.0 ... 0.82

A ``#`` header per image, then one line per face: ``x y w h`` followed by five
``(x, y, visibility)`` triples and an optional trailing confidence. A point
with visibility ``-1`` (or coordinates ``-1 -1``) is missing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable

import cv2
import numpy as np

from .core import (
    NUM_LANDMARKS,
    Box,
    FaceAnnotation,
    LandmarkSet,
    box_center,
    flip_box,
    flip_landmarks,
)

log = logging.getLogger(__name__)


class AnnotationParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class LabelRecord:
    path: str
    faces: list[FaceAnnotation] = field(default_factory=list)


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 RGB in [0, 255]
    faces: list[FaceAnnotation]
    path: str = ""

    @property
    def dims(self) -> tuple[int, int]:
        return (self.image.shape[2], self.image.shape[1])


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: int = 800
    min_face: float = 8.0
    flip_prob: float = 0.5
    # multiplier on the base scale that maps the image's short side to crop_size
    scale_range: tuple[float, float] = (1.0, 3.0)
    brightness: float = 32.0
    contrast: float = 0.5
    saturation: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.crop_size <= 0:
            raise ValueError("crop_size must be positive")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")
        lo, hi = self.scale_range
        if lo <= 0 or lo > hi:
            raise ValueError(f"scale_range must satisfy 0 < min <= max, got {self.scale_range}")
        if min(self.brightness, self.contrast, self.saturation) < 0:
            raise ValueError("color jitter amplitudes must be non-negative")


def _lines(stream: IO[str] | Iterable[str]):
    for lineno, raw in enumerate(stream, start=1):
        yield lineno, raw.strip()


def _numbers(text: str, lineno: int, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split()]
    except ValueError:
        raise AnnotationParseError(f"non-numeric {what}: {text!r}", lineno) from None


def parse_wider_bbox(stream: IO[str] | Iterable[str]) -> list[tuple[str, list[Box]]]:
    """Parse a WIDER FACE ground-truth file into ``(path, boxes)`` records.

    Faces with non-positive width or height are dropped; the number dropped is
    logged as a warning.
    """
    records: list[tuple[str, list[Box]]] = []
    dropped = 0
    it = (item for item in _lines(stream) if item[1])
    for lineno, path in it:
        try:
            count_line, count_text = next(it)
        except StopIteration:
            raise AnnotationParseError(f"missing face count after {path!r}", lineno + 1) from None
        try:
            count = int(count_text)
        except ValueError:
            raise AnnotationParseError(f"malformed face count {count_text!r}", count_line) from None
        if count < 0:
            raise AnnotationParseError(f"negative face count {count}", count_line)
        boxes: list[Box] = []
        for _ in range(max(count, 1)):
            try:
                face_line, text = next(it)
            except StopIteration:
                raise AnnotationParseError(f"truncated record for {path!r}", count_line + 1) from None
            vals = _numbers(text, face_line, "face line")
            if len(vals) < 4:
                raise AnnotationParseError(f"face line needs at least 4 values, got {len(vals)}", face_line)
            if count == 0:
                continue
            x, y, w, h = vals[:4]
            if w <= 0 or h <= 0:
                dropped += 1
                continue
            boxes.append(Box.from_xywh(x, y, w, h))
        records.append((path, boxes))
    if dropped:
        log.warning("dropped %d face(s) with non-positive size", dropped)
    return records


def _is_missing(x: float, y: float, vis: float) -> bool:
    return vis == -1 or (x == -1 and y == -1)


def parse_landmark_labels(stream: IO[str] | Iterable[str]) -> list[LabelRecord]:
    records: list[LabelRecord] = []
    dropped = 0
    for lineno, text in _lines(stream):
        if not text:
            continue
        if text.startswith("#"):
            path = text[1:].strip()
            if not path:
                raise AnnotationParseError("empty image path in header", lineno)
            records.append(LabelRecord(path))
            continue
        if not records:
            raise AnnotationParseError("face line before any '# path' header", lineno)
        vals = _numbers(text, lineno, "face line")
        if len(vals) < 4:
            raise AnnotationParseError(f"face line needs at least 4 values, got {len(vals)}", lineno)
        x, y, w, h = vals[:4]
        if w <= 0 or h <= 0:
            dropped += 1
            continue
        box = Box.from_xywh(x, y, w, h)
        rest = vals[4:]
        if len(rest) >= 3 * NUM_LANDMARKS:
            triples = np.asarray(rest[: 3 * NUM_LANDMARKS]).reshape(NUM_LANDMARKS, 3)
            valid = [not _is_missing(*t) for t in triples]
            pts = np.where(np.asarray(valid)[:, None], triples[:, :2], 0.0)
            lms = LandmarkSet.from_array(pts, valid)
            face = FaceAnnotation(box, lms, any(valid))
        elif rest:
            raise AnnotationParseError(
                f"expected {3 * NUM_LANDMARKS} landmark values after the box, got {len(rest)}", lineno
            )
        else:
            face = FaceAnnotation(box)
        records[-1].faces.append(face)
    if dropped:
        log.warning("dropped %d face(s) with non-positive size", dropped)
    return records


def read_annotations(path, fmt: str = "auto") -> list[LabelRecord]:
    """Read either layout into ``LabelRecord`` objects (``fmt``: auto, wider, retinaface)."""
    text = Path(path).read_text()
    if fmt == "auto":
        first = next((ln.strip() for ln in text.splitlines() if ln.strip()), "")
        fmt = "retinaface" if first.startswith("#") else "wider"
    if fmt == "retinaface":
        return parse_landmark_labels(text.splitlines())
    if fmt == "wider":
        return [LabelRecord(p, [FaceAnnotation(b) for b in boxes]) for p, boxes in parse_wider_bbox(text.splitlines())]
    raise ValueError(f"unknown annotation format {fmt!r}")


def load_image(path) -> np.ndarray:
    """Decode an image file into a float32 ``(3, H, W)`` RGB array in [0, 255]."""
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise OSError(f"cannot read image {path}")
    return np.ascontiguousarray(bgr[..., ::-1].transpose(2, 0, 1), dtype=np.float32)


def save_image(path, image: np.ndarray) -> None:
    hwc = np.clip(np.asarray(image).transpose(1, 2, 0)[..., ::-1], 0, 255).round().astype(np.uint8)
    if not cv2.imwrite(str(path), hwc):
        raise OSError(f"cannot write image {path}")


def load_sample(record: LabelRecord, image_root=".") -> Sample:
    image = load_image(Path(image_root) / record.path)
    h, w = image.shape[1:]
    faces = []
    for f in record.faces:
        b = f.box
        if b.x2 <= 0 or b.y2 <= 0 or b.x1 >= w or b.y1 >= h:
            continue
        if f.landmark_valid:
            pts = f.landmarks.as_array()[list(f.landmarks.valid)]
            inside = np.all((pts[:, 0] >= 0) & (pts[:, 0] <= w) & (pts[:, 1] >= 0) & (pts[:, 1] <= h))
            if not inside:
                f = replace(f, landmark_valid=False)
        faces.append(f)
    return Sample(image, faces, record.path)


def hflip_sample(sample: Sample) -> Sample:
    """Mirror image and annotations horizontally (landmark indices swapped)."""
    width = sample.image.shape[2]
    faces = [
        FaceAnnotation(flip_box(f.box, width), flip_landmarks(f.landmarks, width), f.landmark_valid)
        for f in sample.faces
    ]
    return Sample(np.ascontiguousarray(sample.image[:, :, ::-1]), faces, sample.path)


@dataclass(frozen=True)
class AugmentPlan:
    """Geometric parameters drawn for one sample: ``x' = scale * x - crop_x`` after an optional mirror."""

    flip: bool
    scale: float
    crop_x: float
    crop_y: float
    brightness: float
    contrast: float
    saturation: float


def draw_plan(dims: tuple[int, int], cfg: AugmentConfig, rng: np.random.Generator) -> AugmentPlan:
    w, h = dims
    flip = bool(rng.random() < cfg.flip_prob)
    base = cfg.crop_size / min(w, h)
    scale = base * float(rng.uniform(*cfg.scale_range))
    sw, sh = w * scale, h * scale
    crop_x = float(rng.uniform(min(0.0, sw - cfg.crop_size), max(0.0, sw - cfg.crop_size)))
    crop_y = float(rng.uniform(min(0.0, sh - cfg.crop_size), max(0.0, sh - cfg.crop_size)))
    return AugmentPlan(
        flip=flip,
        scale=scale,
        crop_x=crop_x,
        crop_y=crop_y,
        brightness=float(rng.uniform(-cfg.brightness, cfg.brightness)),
        contrast=float(rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)),
        saturation=float(rng.uniform(1 - cfg.saturation, 1 + cfg.saturation)),
    )


def _transform_face(face: FaceAnnotation, plan: AugmentPlan, crop: int, min_face: float) -> FaceAnnotation | None:
    s = plan.scale
    b = face.box
    box = Box(b.x1 * s - plan.crop_x, b.y1 * s - plan.crop_y, b.x2 * s - plan.crop_x, b.y2 * s - plan.crop_y)
    cx, cy = box_center(box)
    if not (0 <= cx < crop and 0 <= cy < crop):
        return None
    box = Box(
        min(max(box.x1, 0.0), crop), min(max(box.y1, 0.0), crop),
        min(max(box.x2, 0.0), crop), min(max(box.y2, 0.0), crop),
    )
    if min(box.width, box.height) < min_face:
        return None
    pts = face.landmarks.as_array() * s - np.array([plan.crop_x, plan.crop_y])
    valid = [
        v and 0 <= x <= crop and 0 <= y <= crop for v, (x, y) in zip(face.landmarks.valid, pts)
    ]
    lms = LandmarkSet.from_array(pts, valid)
    return FaceAnnotation(box, lms, face.landmark_valid and any(valid))


def apply_plan(sample: Sample, plan: AugmentPlan, cfg: AugmentConfig) -> Sample:
    if plan.flip:
        sample = hflip_sample(sample)
    crop = cfg.crop_size
    s = plan.scale
    m = np.array([
        [s, 0.0, -plan.crop_x + 0.5 * (s - 1.0)],
        [0.0, s, -plan.crop_y + 0.5 * (s - 1.0)],
    ])
    hwc = np.ascontiguousarray(sample.image.transpose(1, 2, 0), dtype=np.float32)
    out = cv2.warpAffine(hwc, m, (crop, crop), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0)

    # color jitter: saturation blend with luma, contrast about the mean, additive brightness
    gray = out @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
    out = gray[..., None] + (out - gray[..., None]) * plan.saturation
    out = (out - out.mean()) * plan.contrast + out.mean() + plan.brightness
    out = np.clip(out, 0, 255).astype(np.float32)

    faces = [f for f in (_transform_face(f, plan, crop, cfg.min_face) for f in sample.faces) if f is not None]
    return Sample(np.ascontiguousarray(out.transpose(2, 0, 1)), faces, sample.path)


def augment(sample: Sample, cfg: AugmentConfig = AugmentConfig(), rng: np.random.Generator | None = None) -> Sample:
    """Random flip, scale, square crop (zero padded past the border) and color jitter.

    Output is ``crop_size x crop_size``. Faces whose center leaves the crop are
    dropped; the rest are clamped to it and dropped if their shorter side is
    below ``min_face``. Deterministic for a given ``rng`` (default: seeded from
    ``cfg.rng_seed``).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    plan = draw_plan(sample.dims, cfg, rng)
    return apply_plan(sample, plan, cfg)


__all__ = [
    "AnnotationParseError",
    "AugmentConfig",
    "AugmentPlan",
    "LabelRecord",
    "Sample",
    "apply_plan",
    "augment",
    "draw_plan",
    "hflip_sample",
    "load_image",
    "load_sample",
    "parse_landmark_labels",
    "parse_wider_bbox",
    "read_annotations",
    "save_image",
]
