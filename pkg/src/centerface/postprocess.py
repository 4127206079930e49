"""Greedy NMS, IoU-threshold box voting and test-time-augmentation merging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    Box,
    Detection,
    LandmarkSet,
    detections_to_arrays,
    flip_box,
    flip_landmarks,
    pairwise_iou,
)
from .decoder import unpad_rescale

VOTE_IOU = 0.4


@dataclass(frozen=True)
class PostConfig:
    nms_iou: float = 0.3
    vote_iou: float = VOTE_IOU
    tta_scales: tuple[float, ...] = (1.0,)
    tta_flip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tta_scales", tuple(float(s) for s in self.tta_scales))
        for name in ("nms_iou", "vote_iou"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if not self.tta_scales or any(s <= 0 for s in self.tta_scales):
            raise ValueError("tta_scales must be a non-empty list of positive factors")


@dataclass(frozen=True)
class ViewTransform:
    """Forward transform of one test-time view: optional mirror, then scale, then pad offset."""

    scale: float = 1.0
    flip: bool = False
    pad: tuple[float, float] = (0.0, 0.0)
    image_width: float = 0.0


def _score_order(boxes: np.ndarray, scores: np.ndarray) -> np.ndarray:
    # score descending, then y1 ascending, then x1 ascending
    return np.lexsort((boxes[:, 0], boxes[:, 1], -scores))


def nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float) -> np.ndarray:
    """Indices kept by greedy NMS, in keep order."""
    order = _score_order(boxes, scores)
    x1, y1, x2, y2 = boxes.T
    areas = (x2 - x1) * (y2 - y1)
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        iw = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        ih = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
        union = areas[i] + areas[rest] - inter
        ovr = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
        order = rest[ovr <= iou_thresh]
    return np.asarray(keep, dtype=int)


def nms_greedy(dets: Sequence[Detection], iou_thresh: float) -> list[Detection]:
    if not dets:
        return []
    boxes, scores, _, _ = detections_to_arrays(dets)
    return [dets[i] for i in nms_indices(boxes, scores, iou_thresh)]


def box_vote(dets: Sequence[Detection], vote_iou: float = VOTE_IOU, pool: Sequence[Detection] | None = None) -> list[Detection]:
    """Replace each detection by the score-weighted mean of its voters.

    Voters are the members of ``pool`` (default: ``dets`` itself) with
    IoU >= ``vote_iou``. Landmarks are averaged per point over voters whose
    point is valid. The voted score is the voters' maximum.
    """
    if not dets:
        return []
    pool = list(dets) if pool is None else list(pool)
    boxes, _, _, _ = detections_to_arrays(dets)
    pboxes, pscores, plms, pvalid = detections_to_arrays(pool)
    voters = pairwise_iou(boxes, pboxes) >= vote_iou

    out = []
    for i, d in enumerate(dets):
        m = voters[i]
        if not m.any():
            out.append(d)
            continue
        w = pscores[m]
        if w.sum() <= 0:
            w = np.ones_like(w)
        box = (pboxes[m] * w[:, None]).sum(0) / w.sum()
        pw = pvalid[m] * w[:, None]  # (k, 5)
        denom = pw.sum(0)
        pts = d.landmarks.as_array()
        has = denom > 0
        pts[has] = (plms[m] * pw[..., None]).sum(0)[has] / denom[has, None]
        valid = tuple(bool(v) for v in has)
        out.append(Detection(Box(*box), float(pscores[m].max()), LandmarkSet.from_array(pts, valid)))
    return out


def map_to_source(dets: Sequence[Detection], view: ViewTransform) -> list[Detection]:
    """Undo a view's pad, scale and optional mirror."""
    if view.scale == 1.0 and tuple(view.pad) == (0.0, 0.0) and not view.flip:
        return list(dets)
    out = unpad_rescale(list(dets), view.scale, view.pad)
    if view.flip:
        out = [
            Detection(flip_box(d.box, view.image_width), d.score, flip_landmarks(d.landmarks, view.image_width))
            for d in out
        ]
    return out


def tta_merge(per_view_dets: Sequence[tuple[ViewTransform, Sequence[Detection]]], cfg: PostConfig = PostConfig()) -> list[Detection]:
    union: list[Detection] = []
    for view, dets in per_view_dets:
        union.extend(map_to_source(dets, view))
    if not union:
        return []
    kept = nms_greedy(union, cfg.nms_iou)
    voted = box_vote(kept, cfg.vote_iou, pool=union)
    order = np.argsort([-d.score for d in voted], kind="stable")
    return [voted[i] for i in order]


def views_for(cfg: PostConfig) -> list[tuple[float, bool]]:
    """(scale, flip) pairs requested by ``cfg``, identity first when present."""
    flips = (False, True) if cfg.tta_flip else (False,)
    return [(s, f) for s in cfg.tta_scales for f in flips]


__all__ = [
    "PostConfig",
    "ViewTransform",
    "box_vote",
    "map_to_source",
    "nms_greedy",
    "nms_indices",
    "tta_merge",
    "views_for",
]
