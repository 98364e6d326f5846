"""Detection-vs-ground-truth evaluation and K-fold significance testing.

The precision metric here is a per-class detection-count precision, not the
PR-curve area:

    mAP = (1/|classes|) * sum_c |TP_c| / (|TP_c| + |FP_c|)

swept over IoU thresholds 0.50..0.95 in steps of 0.05. Matching is greedy in
descending confidence with single-use ground truths; both the confidence and
the IoU comparisons are strict (">"). Fold aggregation weights each fold by
its relevant ground-truth box count, and group comparisons use Welch's
unequal-variance two-sample t-test with the Welch-Satterthwaite degrees of
freedom; the two-tailed p-value comes from the t-distribution CDF evaluated
via the regularized incomplete beta function.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import betainc

from .dataset import classify_bbox

__all__ = [
    "IOU_SWEEP",
    "Detection",
    "GroundTruth",
    "MatchResult",
    "FoldMetric",
    "WelchResult",
    "PairwiseTest",
    "ZeroVarianceError",
    "iou",
    "match_detections",
    "mean_class_precision",
    "map_iou_sweep",
    "weighted_mean",
    "weighted_std",
    "welch_t",
    "t_cdf",
    "welch_p_value",
    "welch_test",
    "pairwise_tests",
    "evaluate_image_sets",
    "filter_by_classes",
    "filter_by_size",
    "load_coco_ground_truth",
    "load_coco_detections",
]

IOU_SWEEP = tuple((50 + 5 * i) / 100 for i in range(10))  # 0.50 .. 0.95


class ZeroVarianceError(ValueError):
    """Both samples have zero variance; the t statistic is undefined."""


@dataclass(frozen=True)
class Detection:
    class_id: int
    bbox: tuple[float, float, float, float]  # (x, y, w, h)
    confidence: float

    def __post_init__(self) -> None:
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ValueError(f"degenerate detection bbox {self.bbox}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class GroundTruth:
    class_id: int
    bbox: tuple[float, float, float, float]
    size_class: str = ""

    def __post_init__(self) -> None:
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ValueError(f"degenerate ground-truth bbox {self.bbox}")
        if not self.size_class:
            object.__setattr__(self, "size_class", classify_bbox(self.bbox))


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection-over-union of two (x, y, w, h) boxes; 0 when disjoint."""
    ax, ay, aw, ah = (float(v) for v in a)
    bx, by, bw, bh = (float(v) for v in b)
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ValueError("iou of a degenerate box is undefined")
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union


@dataclass
class MatchResult:
    """TP/FP counts per class plus per-detection labels.

    ``labels`` aligns with the input detection order: 'TP', 'FP', or None
    for detections at or below the confidence threshold (ignored).
    ``gt_count`` records how many ground truths each class had, which the
    precision average needs to resolve zero-denominator classes.
    """

    tp: dict[int, int] = field(default_factory=dict)
    fp: dict[int, int] = field(default_factory=dict)
    gt_count: dict[int, int] = field(default_factory=dict)
    labels: list[str | None] = field(default_factory=list)

    def merge(self, other: "MatchResult") -> "MatchResult":
        merged = MatchResult(tp=dict(self.tp), fp=dict(self.fp),
                             gt_count=dict(self.gt_count),
                             labels=list(self.labels) + list(other.labels))
        for src, dst in ((other.tp, merged.tp), (other.fp, merged.fp),
                         (other.gt_count, merged.gt_count)):
            for key, value in src.items():
                dst[key] = dst.get(key, 0) + value
        return merged


def match_detections(detections: Sequence[Detection],
                     ground_truths: Sequence[GroundTruth],
                     iou_threshold: float,
                     confidence_threshold: float) -> MatchResult:
    """Greedy TP/FP assignment for one image's detections.

    Detections with confidence <= threshold are ignored. The rest are
    processed in descending confidence (stable for ties); a detection is a
    TP iff it overlaps an unmatched ground truth of the same class with
    IoU > threshold, otherwise an FP. Each ground truth matches at most
    once, so an FP covers all three failure modes: no ground truth at all,
    insufficient overlap, or a wrong class label.
    """
    if not (0.0 < iou_threshold <= 1.0) or not (0.0 < confidence_threshold <= 1.0):
        raise ValueError("thresholds must be in (0, 1]")

    result = MatchResult(labels=[None] * len(detections))
    for gt in ground_truths:
        result.gt_count[gt.class_id] = result.gt_count.get(gt.class_id, 0) + 1

    order = sorted(range(len(detections)),
                   key=lambda i: -detections[i].confidence)
    matched = [False] * len(ground_truths)
    for det_index in order:
        det = detections[det_index]
        if det.confidence <= confidence_threshold:
            continue
        best_iou, best_gt = 0.0, -1
        for gt_index, gt in enumerate(ground_truths):
            if matched[gt_index] or gt.class_id != det.class_id:
                continue
            overlap = iou(det.bbox, gt.bbox)
            if overlap > best_iou:
                best_iou, best_gt = overlap, gt_index
        if best_gt >= 0 and best_iou > iou_threshold:
            matched[best_gt] = True
            result.tp[det.class_id] = result.tp.get(det.class_id, 0) + 1
            result.labels[det_index] = "TP"
        else:
            result.fp[det.class_id] = result.fp.get(det.class_id, 0) + 1
            result.labels[det_index] = "FP"
    return result


def mean_class_precision(match: MatchResult, class_set: Iterable[int]) -> float:
    """Mean over classes of |TP_c| / (|TP_c| + |FP_c|).

    A class with neither TPs nor FPs contributes 0 when ground truths for
    it exist (silence on present objects is penalized) and is excluded from
    the class count when none exist (absent classes are not rewarded or
    punished). Returns 0.0 if every class is excluded.
    """
    classes = list(class_set)
    if not classes:
        raise ValueError("class set must be non-empty")
    total = 0.0
    counted = 0
    for c in classes:
        tp = match.tp.get(c, 0)
        fp = match.fp.get(c, 0)
        if tp + fp > 0:
            total += tp / (tp + fp)
            counted += 1
        elif match.gt_count.get(c, 0) > 0:
            counted += 1  # contributes 0
    return total / counted if counted else 0.0


def evaluate_image_sets(detections_by_image: Mapping[object, Sequence[Detection]],
                        ground_truths_by_image: Mapping[object, Sequence[GroundTruth]],
                        iou_threshold: float,
                        confidence_threshold: float) -> MatchResult:
    """Match per image and merge counts across a whole image set."""
    result = MatchResult()
    image_ids = sorted(set(detections_by_image) | set(ground_truths_by_image), key=str)
    for image_id in image_ids:
        result = result.merge(match_detections(
            detections_by_image.get(image_id, ()),
            ground_truths_by_image.get(image_id, ()),
            iou_threshold, confidence_threshold))
    return result


def map_iou_sweep(detections_by_image: Mapping[object, Sequence[Detection]],
                  ground_truths_by_image: Mapping[object, Sequence[GroundTruth]],
                  class_set: Iterable[int],
                  confidence_threshold: float) -> float:
    """Mean of the per-class precision average over IoU 0.50..0.95 (10 steps)."""
    classes = list(class_set)
    values = []
    for threshold in IOU_SWEEP:
        match = evaluate_image_sets(detections_by_image, ground_truths_by_image,
                                    threshold, confidence_threshold)
        values.append(mean_class_precision(match, classes))
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# K-fold aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldMetric:
    """One fold's mAP with its weight (count of relevant ground-truth boxes)."""

    fold_index: int
    map_value: float
    weight_count: float

    def __post_init__(self) -> None:
        if self.weight_count < 0:
            raise ValueError("fold weight must be >= 0")


def _normalized_weights(folds: Sequence[FoldMetric]) -> np.ndarray:
    weights = np.asarray([f.weight_count for f in folds], dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise ValueError("fold weights sum to zero")
    return weights / total


def weighted_mean(folds: Sequence[FoldMetric]) -> float:
    """Weighted mean of fold mAPs, weights normalized to sum 1."""
    weights = _normalized_weights(folds)
    values = np.asarray([f.map_value for f in folds], dtype=np.float64)
    return float(np.dot(weights, values))


def weighted_std(folds: Sequence[FoldMetric]) -> float:
    """Weighted K-fold standard deviation.

    sqrt( sum_k w_k (mu_k - mu*)^2 / ((K-1)/K * sum_k w_k) ) with the same
    normalized weights as ``weighted_mean``; with equal weights this reduces
    exactly to the sample standard deviation (denominator K-1).
    """
    if len(folds) < 2:
        raise ValueError("weighted std needs at least 2 folds")
    weights = _normalized_weights(folds)
    values = np.asarray([f.map_value for f in folds], dtype=np.float64)
    mean = float(np.dot(weights, values))
    k = len(folds)
    numerator = float(np.dot(weights, (values - mean) ** 2))
    denominator = (k - 1) / k * weights.sum()
    return math.sqrt(numerator / denominator)


# ---------------------------------------------------------------------------
# Welch's two-sample t-test
# ---------------------------------------------------------------------------

def welch_t(sample1: Sequence[float], sample2: Sequence[float]) -> tuple[float, float]:
    """Welch's t statistic and Welch-Satterthwaite degrees of freedom.

    t  = (m1 - m2) / sqrt(s1^2/n1 + s2^2/n2)
    nu = (s1^2/n1 + s2^2/n2)^2 / ( (s1^2/n1)^2/(n1-1) + (s2^2/n2)^2/(n2-1) )

    with unbiased sample variances (denominator n-1).
    """
    x1 = np.asarray(sample1, dtype=np.float64)
    x2 = np.asarray(sample2, dtype=np.float64)
    if x1.size < 2 or x2.size < 2:
        raise ValueError("each sample needs at least 2 values")
    se1 = x1.var(ddof=1) / x1.size
    se2 = x2.var(ddof=1) / x2.size
    pooled = se1 + se2
    if pooled <= 0:
        raise ZeroVarianceError("both samples have zero variance")
    t = (x1.mean() - x2.mean()) / math.sqrt(pooled)
    nu = pooled ** 2 / (se1 ** 2 / (x1.size - 1) + se2 ** 2 / (x2.size - 1))
    return float(t), float(nu)


def t_cdf(t: float, nu: float) -> float:
    """CDF of the t-distribution via the regularized incomplete beta.

    For t >= 0:  F(t) = 1 - I_x(nu/2, 1/2) / 2  with x = nu / (nu + t^2);
    the t < 0 branch follows by symmetry.
    """
    if nu <= 0:
        raise ValueError("degrees of freedom must be strictly positive")
    x = nu / (nu + t * t)
    tail = 0.5 * float(betainc(nu / 2.0, 0.5, x))
    return 1.0 - tail if t >= 0 else tail


def welch_p_value(t: float, nu: float) -> float:
    """Two-tailed p-value: 2 * (1 - F(|t|, nu))."""
    if nu <= 0:
        raise ValueError("degrees of freedom must be strictly positive")
    return float(betainc(nu / 2.0, 0.5, nu / (nu + t * t)))


@dataclass(frozen=True)
class WelchResult:
    t: float
    nu: float
    p_two_tailed: float
    reject: bool
    alpha: float = 0.05

    def __post_init__(self) -> None:
        if self.nu <= 0:
            raise ValueError("degrees of freedom must be strictly positive")
        if not (0.0 <= self.p_two_tailed <= 1.0):
            raise ValueError("p-value must be in [0, 1]")
        if self.reject != (self.p_two_tailed < self.alpha):
            raise ValueError("reject flag inconsistent with p < alpha")

    @classmethod
    def from_stats(cls, t: float, nu: float, alpha: float = 0.05) -> "WelchResult":
        p = welch_p_value(t, nu)
        return cls(t=t, nu=nu, p_two_tailed=p, reject=p < alpha, alpha=alpha)


def welch_test(sample1: Sequence[float], sample2: Sequence[float],
               alpha: float = 0.05) -> WelchResult:
    t, nu = welch_t(sample1, sample2)
    return WelchResult.from_stats(t, nu, alpha)


@dataclass(frozen=True)
class PairwiseTest:
    """One unordered group pair: a result, or an error message for this pair."""

    label_a: str
    label_b: str
    result: WelchResult | None = None
    error: str | None = None


def pairwise_tests(groups: Mapping[str, Sequence[float]],
                   alpha: float = 0.05) -> list[PairwiseTest]:
    """Welch tests over all unordered group pairs, lexicographic by labels.

    A degenerate pair (a group with fewer than 2 samples, or zero pooled
    variance) yields an error entry; the remaining pairs are still computed.
    """
    if len(groups) < 2:
        raise ValueError("pairwise tests need at least 2 groups")
    results = []
    for label_a, label_b in combinations(sorted(groups), 2):
        try:
            result = welch_test(groups[label_a], groups[label_b], alpha)
            results.append(PairwiseTest(label_a, label_b, result=result))
        except ValueError as exc:
            results.append(PairwiseTest(label_a, label_b, error=str(exc)))
    return results


# ---------------------------------------------------------------------------
# grouping filters
# ---------------------------------------------------------------------------

def filter_by_classes(detections_by_image: Mapping[object, Sequence[Detection]],
                      ground_truths_by_image: Mapping[object, Sequence[GroundTruth]],
                      class_ids: Iterable[int]):
    """Keep only detections and ground truths of the given classes."""
    keep = set(class_ids)
    dets = {img: [d for d in ds if d.class_id in keep]
            for img, ds in detections_by_image.items()}
    gts = {img: [g for g in gs if g.class_id in keep]
           for img, gs in ground_truths_by_image.items()}
    return dets, gts


def filter_by_size(detections_by_image: Mapping[object, Sequence[Detection]],
                   ground_truths_by_image: Mapping[object, Sequence[GroundTruth]],
                   size_class: str):
    """Keep ground truths of one size class, and the detections they explain.

    A detection follows the size class of its nearest ground truth (highest
    IoU in the same image, any class); a detection with no overlapping
    ground truth falls back to its own box size, so stray detections still
    count against the size bucket they appear in.
    """
    gts = {img: [g for g in gs if g.size_class == size_class]
           for img, gs in ground_truths_by_image.items()}
    dets = {}
    for img, ds in detections_by_image.items():
        candidates = ground_truths_by_image.get(img, ())
        kept = []
        for det in ds:
            best_iou, best_gt = 0.0, None
            for gt in candidates:
                overlap = iou(det.bbox, gt.bbox)
                if overlap > best_iou:
                    best_iou, best_gt = overlap, gt
            size = best_gt.size_class if best_gt is not None else classify_bbox(det.bbox)
            if size == size_class:
                kept.append(det)
        dets[img] = kept
    return dets, gts


# ---------------------------------------------------------------------------
# COCO-style ingestion
# ---------------------------------------------------------------------------

def load_coco_ground_truth(path: str | Path) -> dict[object, list[GroundTruth]]:
    """COCO-style annotation JSON -> per-image ground-truth lists.

    Expects an object with an ``annotations`` list whose entries carry
    ``image_id``, ``category_id`` and ``bbox`` [x, y, w, h]; an ``images``
    list, when present, seeds empty images.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    by_image: dict[object, list[GroundTruth]] = defaultdict(list)
    for image in data.get("images", []):
        by_image[image["id"]]
    for ann in data["annotations"]:
        by_image[ann["image_id"]].append(
            GroundTruth(class_id=int(ann["category_id"]),
                        bbox=tuple(float(v) for v in ann["bbox"])))
    return dict(by_image)


def load_coco_detections(path: str | Path) -> dict[object, list[Detection]]:
    """COCO results JSON (a list of detections with scores) -> per-image lists."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    by_image: dict[object, list[Detection]] = defaultdict(list)
    for det in data:
        by_image[det["image_id"]].append(
            Detection(class_id=int(det["category_id"]),
                      bbox=tuple(float(v) for v in det["bbox"]),
                      confidence=float(det["score"])))
    return dict(by_image)
