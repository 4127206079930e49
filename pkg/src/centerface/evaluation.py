"""Detection metrics: greedy IoU matching, all-point AP and discrete ROC."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import Box, Detection, boxes_to_array, detections_to_arrays, pairwise_iou

log = logging.getLogger(__name__)


@dataclass
class MatchResult:
    scores: np.ndarray  # (n_pred,)
    tp: np.ndarray  # (n_pred,) bool
    ignored: np.ndarray  # (n_pred,) bool, matched an ignore region
    gt_matched: np.ndarray  # (n_gt,) bool

    @property
    def n_tp(self) -> int:
        return int(self.tp.sum())

    @property
    def n_fp(self) -> int:
        return int((~self.tp & ~self.ignored).sum())

    @property
    def n_gt(self) -> int:
        return int(self.gt_matched.size)

    @classmethod
    def merge(cls, results: Iterable["MatchResult"]) -> "MatchResult":
        results = list(results)
        if not results:
            return cls(np.zeros(0), np.zeros(0, bool), np.zeros(0, bool), np.zeros(0, bool))
        return cls(
            np.concatenate([r.scores for r in results]),
            np.concatenate([r.tp for r in results]),
            np.concatenate([r.ignored for r in results]),
            np.concatenate([r.gt_matched for r in results]),
        )


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    ap: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["# curve=pr", "version=1"])
        w.writerow(["threshold", "precision", "recall"])
        for row in zip(self.thresholds, self.precision, self.recall):
            w.writerow([f"{v:.6g}" for v in row])
        return buf.getvalue()


@dataclass
class ROCCurve:
    thresholds: np.ndarray
    fp: np.ndarray  # cumulative false positives, starts at 0
    tpr: np.ndarray
    total_gt: int = 0

    def tpr_at(self, fp_budget: float) -> float:
        """TPR at the last curve point whose cumulative FP count fits the budget."""
        idx = np.nonzero(self.fp <= fp_budget)[0]
        return float(self.tpr[idx[-1]]) if idx.size else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["# curve=roc", "version=1"])
        w.writerow(["threshold", "fp", "tpr"])
        for t, f, r in zip(self.thresholds, self.fp, self.tpr):
            w.writerow([f"{t:.6g}", int(f), f"{r:.6g}"])
        return buf.getvalue()


def match_detections(
    preds: Sequence[Detection],
    gts: Sequence[Box],
    iou_thresh: float = 0.5,
    ignore: Sequence[Box] = (),
) -> MatchResult:
    """Greedy one-to-one matching in descending score order.

    Each prediction takes the highest-IoU unmatched ground truth at or above
    ``iou_thresh``. A prediction that matches nothing but overlaps an ignore
    region at the threshold is flagged ``ignored`` and counts as neither TP nor
    FP. Equal scores keep input order.
    """
    n = len(preds)
    boxes, scores, _, _ = detections_to_arrays(preds)
    gt = boxes_to_array(gts)
    tp = np.zeros(n, dtype=bool)
    ignored = np.zeros(n, dtype=bool)
    matched = np.zeros(len(gt), dtype=bool)
    ious = pairwise_iou(boxes, gt) if len(gt) else np.zeros((n, 0))
    ign = pairwise_iou(boxes, boxes_to_array(ignore)) if len(ignore) else np.zeros((n, 0))

    for i in np.argsort(-scores, kind="stable"):
        cand = np.where(matched, -1.0, ious[i])
        if cand.size:
            j = int(np.argmax(cand))
            if cand[j] >= iou_thresh:
                tp[i] = True
                matched[j] = True
                continue
        if ign.shape[1] and ign[i].max() >= iou_thresh:
            ignored[i] = True
    return MatchResult(scores, tp, ignored, matched)


def _sweep(matches: MatchResult):
    """Cumulative (threshold, tp, fp) at every unique score, descending."""
    keep = ~matches.ignored
    scores = matches.scores[keep]
    tp = matches.tp[keep].astype(np.int64)
    order = np.argsort(-scores, kind="stable")
    scores, tp = scores[order], tp[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1 - tp)
    if scores.size == 0:
        return scores, ctp, cfp
    # last index of each run of equal scores
    last = np.r_[np.nonzero(np.diff(scores))[0], scores.size - 1]
    return scores[last], ctp[last], cfp[last]


def average_precision(all_matches: MatchResult | Sequence[MatchResult], total_gt: int | None = None) -> PRCurve:
    """All-point interpolated AP over unique score thresholds."""
    if not isinstance(all_matches, MatchResult):
        all_matches = MatchResult.merge(all_matches)
    if total_gt is None:
        total_gt = all_matches.n_gt
    if total_gt < 0:
        raise ValueError("total_gt must be non-negative")
    thr, ctp, cfp = _sweep(all_matches)
    if total_gt == 0:
        if thr.size:
            log.warning("no ground truth faces: AP defined as 0 for %d predictions", int(cfp[-1] + ctp[-1]))
        return PRCurve(thr, np.zeros_like(thr), np.zeros_like(thr), 0.0)

    precision = ctp / np.maximum(ctp + cfp, 1)
    recall = ctp / total_gt
    # envelope: best precision at recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1] if precision.size else precision
    prev = np.r_[0.0, recall[:-1]]
    ap = float(np.sum((recall - prev) * envelope))
    return PRCurve(thr, precision, recall, ap)


def roc_discrete(all_matches: MatchResult | Sequence[MatchResult], total_gt: int | None = None) -> ROCCurve:
    """(cumulative FP, TPR) walk down the score-sorted predictions."""
    if not isinstance(all_matches, MatchResult):
        all_matches = MatchResult.merge(all_matches)
    if total_gt is None:
        total_gt = all_matches.n_gt
    thr, ctp, cfp = _sweep(all_matches)
    tpr = ctp / total_gt if total_gt > 0 else np.zeros_like(ctp, dtype=float)
    return ROCCurve(
        thresholds=np.r_[np.inf, thr],
        fp=np.r_[0, cfp].astype(np.int64),
        tpr=np.r_[0.0, tpr].astype(float),
        total_gt=int(total_gt),
    )


@dataclass
class EvalReport:
    pr: PRCurve
    roc: ROCCurve
    total_gt: int
    n_images: int
    fp_budget: float
    excluded: list[str] = field(default_factory=list)

    @property
    def ap(self) -> float:
        return self.pr.ap

    @property
    def tpr_at_budget(self) -> float:
        return self.roc.tpr_at(self.fp_budget)

    def summary(self) -> str:
        lines = [
            f"images        {self.n_images}",
            f"ground truth  {self.total_gt}",
            f"AP            {self.ap:.4f}",
            f"TPR@{self.fp_budget:g}FP    {self.tpr_at_budget:.4f}",
        ]
        if self.excluded:
            lines.append(f"excluded      {len(self.excluded)} image(s) without a counterpart")
        return "\n".join(lines)


def evaluate(
    preds: dict[str, Sequence[Detection]],
    gts: dict[str, Sequence[Box]],
    *,
    iou_thresh: float = 0.5,
    fp_budget: float = 1000,
    ignore: dict[str, Sequence[Box]] | None = None,
) -> EvalReport:
    """Dataset-level AP and ROC over the images present on both sides."""
    ignore = ignore or {}
    shared = [k for k in gts if k in preds]
    excluded = sorted(set(preds) ^ set(gts))
    for name in excluded:
        log.warning("image %s has no %s counterpart; excluded", name, "ground-truth" if name in preds else "prediction")
    results = [match_detections(preds[k], gts[k], iou_thresh, ignore.get(k, ())) for k in shared]
    merged = MatchResult.merge(results)
    total = merged.n_gt
    return EvalReport(
        pr=average_precision(merged, total),
        roc=roc_discrete(merged, total),
        total_gt=total,
        n_images=len(shared),
        fp_budget=fp_budget,
        excluded=excluded,
    )
