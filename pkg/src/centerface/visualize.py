"""Static overlays: boxes and the five landmark dots on top of the source image."""

from __future__ import annotations

import shutil
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from .core import Detection

# BGR, one colour per score band (lower bound inclusive)
SCORE_BANDS = ((0.9, (0, 255, 0)), (0.6, (0, 255, 255)), (0.0, (0, 0, 255)))
LANDMARK_COLORS = ((255, 0, 0), (255, 0, 255), (0, 165, 255), (255, 255, 0), (128, 0, 255))


def band_color(score: float) -> tuple[int, int, int]:
    for lower, color in SCORE_BANDS:
        if score >= lower:
            return color
    return SCORE_BANDS[-1][1]


def draw_detections(image_bgr: np.ndarray, dets: Sequence[Detection], score_thresh: float = 0.35) -> np.ndarray:
    """Return a copy of a ``(H, W, 3)`` uint8 BGR image with detections drawn."""
    out = image_bgr.copy()
    for d in dets:
        if d.score < score_thresh:
            continue
        color = band_color(d.score)
        x1, y1, x2, y2 = (int(round(v)) for v in d.box.as_tuple())
        cv2.rectangle(out, (x1, y1), (x2, y2), color, 2, cv2.LINE_8)
        for (x, y), valid, lm_color in zip(d.landmarks.points, d.landmarks.valid, LANDMARK_COLORS):
            if valid:
                cv2.circle(out, (int(round(x)), int(round(y))), 2, lm_color, -1, cv2.LINE_8)
    return out


def render_file(image_path, dets: Sequence[Detection], out_path, score_thresh: float = 0.35) -> bool:
    """Write an overlay for one image; returns False when nothing passed the threshold.

    With nothing to draw the source file is copied byte for byte.
    """
    shown = [d for d in dets if d.score >= score_thresh]
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if not shown:
        shutil.copyfile(image_path, out_path)
        return False
    image = cv2.imread(str(image_path), cv2.IMREAD_COLOR)
    if image is None:
        raise OSError(f"cannot read image {image_path}")
    if not cv2.imwrite(str(out_path), draw_detections(image, shown, score_thresh)):
        raise OSError(f"cannot write image {out_path}")
    return True
