"""Network output heads to face detections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .codec import STRIDE, TargetMaps
from .core import NUM_LANDMARKS, Box, Detection, LandmarkSet


@dataclass
class OutputHeads:
    """Raw head planes at stride 4: heatmap ``(h, w)`` in [0, 1], size ``(2, h, w)``
    (log w, log h), offset ``(2, h, w)`` (x, y), landmarks ``(10, h, w)``."""

    heatmap: np.ndarray
    size: np.ndarray
    offset: np.ndarray
    landmarks: np.ndarray
    stride: int = STRIDE

    def __post_init__(self):
        hw = self.heatmap.shape
        if self.heatmap.ndim != 2:
            raise ValueError(f"heatmap must be 2-D, got shape {self.heatmap.shape}")
        for name, channels in (("size", 2), ("offset", 2), ("landmarks", 2 * NUM_LANDMARKS)):
            plane = getattr(self, name)
            if plane.shape != (channels, *hw):
                raise ValueError(f"{name} head has shape {plane.shape}, expected {(channels, *hw)}")

    @classmethod
    def from_targets(cls, targets: TargetMaps) -> "OutputHeads":
        return cls(
            heatmap=targets.heatmap.copy(),
            size=targets.size.copy(),
            offset=targets.offset.copy(),
            landmarks=targets.landmarks.copy(),
            stride=targets.stride,
        )


@dataclass(frozen=True)
class DecodeConfig:
    score_threshold: float = 0.05
    top_k: int = 200
    peak_window: int = 3

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError(f"score_threshold must lie in [0, 1], got {self.score_threshold}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.peak_window < 1 or self.peak_window % 2 == 0:
            raise ValueError("peak_window must be a positive odd integer")


def extract_peaks(heatmap: np.ndarray, cfg: DecodeConfig = DecodeConfig()) -> list[tuple[int, int, float]]:
    """Cells equal to their window maximum (border-clamped) and at or above threshold.

    Plateaus keep every tied member. Sorted by score descending, row-major on
    ties, truncated to ``top_k``.
    """
    heatmap = np.asarray(heatmap)
    local_max = maximum_filter(heatmap, size=cfg.peak_window, mode="nearest")
    ys, xs = np.nonzero((heatmap == local_max) & (heatmap >= cfg.score_threshold))
    scores = heatmap[ys, xs]
    order = np.argsort(-scores, kind="stable")[: cfg.top_k]
    return [(int(xs[i]), int(ys[i]), float(scores[i])) for i in order]


def decode_detections(heads: OutputHeads, input_dims: tuple[float, float], cfg: DecodeConfig = DecodeConfig()) -> list[Detection]:
    """Decode peaks into detections in network-input pixels.

    Boxes are clamped to ``[0, W] x [0, H]``; landmarks are not clamped.
    """
    width, height = input_dims
    peaks = extract_peaks(heads.heatmap, cfg)
    if not peaks:
        return []
    r = heads.stride
    gx = np.array([p[0] for p in peaks])
    gy = np.array([p[1] for p in peaks])
    scores = np.clip([p[2] for p in peaks], 0.0, 1.0)

    cx = (gx + heads.offset[0, gy, gx]) * r
    cy = (gy + heads.offset[1, gy, gx]) * r
    w = np.exp(heads.size[0, gy, gx]) * r
    h = np.exp(heads.size[1, gy, gx]) * r
    boxes = np.column_stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])
    boxes[:, 0::2] = np.clip(boxes[:, 0::2], 0, width)
    boxes[:, 1::2] = np.clip(boxes[:, 1::2], 0, height)

    rel = heads.landmarks[:, gy, gx].T.reshape(-1, NUM_LANDMARKS, 2)
    lms = np.empty_like(rel)
    lms[..., 0] = cx[:, None] + rel[..., 0] * w[:, None]
    lms[..., 1] = cy[:, None] + rel[..., 1] * h[:, None]

    return [
        Detection(Box(*boxes[i]), scores[i], LandmarkSet.from_array(lms[i]))
        for i in range(len(peaks))
    ]


def unpad_rescale(dets: list[Detection], scale: float, pad: tuple[float, float] = (0.0, 0.0)) -> list[Detection]:
    """Map network-input coordinates back to the source image: ``c <- (c - pad) / scale``."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    px, py = pad
    out = []
    for d in dets:
        b = d.box
        box = Box((b.x1 - px) / scale, (b.y1 - py) / scale, (b.x2 - px) / scale, (b.y2 - py) / scale)
        pts = d.landmarks.as_array()
        pts[:, 0] = (pts[:, 0] - px) / scale
        pts[:, 1] = (pts[:, 1] - py) / scale
        out.append(Detection(box, d.score, LandmarkSet.from_array(pts, d.landmarks.valid)))
    return out
