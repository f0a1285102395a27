"""Interval matching and detection metrics.

Matching is greedy: proposals are visited in descending confidence (onset
breaks ties) and each claims the still-unclaimed ground truth with the
highest overlap at or above the threshold. Class never gates a match; the
per-class recalls are keyed on the ground truth's class. Cross-fold
aggregation sums raw counts (micro style) and scores once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ShapeError
from .labels import CLASSES, GroundTruth, MACRO, MICRO
from .proposals import Proposal


def interval_iou(a_on: int, a_off: int, b_on: int, b_off: int) -> float:
    """Intersection over union of inclusive frame intervals (frame counts)."""
    if a_off < a_on or b_off < b_on:
        raise ShapeError(f"bad intervals ({a_on},{a_off}) ({b_on},{b_off})")
    inter = min(a_off, b_off) - max(a_on, b_on) + 1
    if inter <= 0:
        return 0.0
    union = max(a_off, b_off) - min(a_on, b_on) + 1
    return inter / union


@dataclass
class MatchCounts:
    """Raw matching outcome; addable across videos and folds."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tp_by_class: dict[str, int] = field(default_factory=lambda: {c: 0 for c in CLASSES})
    gt_by_class: dict[str, int] = field(default_factory=lambda: {c: 0 for c in CLASSES})
    pairs: list[tuple[int, int]] = field(default_factory=list)  # (proposal, gt)

    def merged_with(self, other: "MatchCounts") -> "MatchCounts":
        out = MatchCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            {c: self.tp_by_class[c] + other.tp_by_class[c] for c in CLASSES},
            {c: self.gt_by_class[c] + other.gt_by_class[c] for c in CLASSES},
        )
        return out


def merge_counts(parts: list[MatchCounts]) -> MatchCounts:
    total = MatchCounts()
    for part in parts:
        total = total.merged_with(part)
    return total


def match(
    proposals: list[Proposal],
    gts: list[GroundTruth],
    iou_threshold: float,
) -> MatchCounts:
    order = sorted(
        range(len(proposals)),
        key=lambda i: (-proposals[i].confidence, proposals[i].onset, i),
    )
    claimed = [False] * len(gts)
    counts = MatchCounts()
    for gt in gts:
        counts.gt_by_class[gt.label] += 1
    for pi in order:
        p = proposals[pi]
        best_iou = 0.0
        best_gi = -1
        for gi, gt in enumerate(gts):
            if claimed[gi]:
                continue
            iou = interval_iou(p.onset, p.offset, gt.onset, gt.offset)
            if iou >= iou_threshold and iou > best_iou:
                best_iou = iou
                best_gi = gi
        if best_gi >= 0:
            claimed[best_gi] = True
            counts.tp += 1
            counts.tp_by_class[gts[best_gi].label] += 1
            counts.pairs.append((pi, best_gi))
        else:
            counts.fp += 1
    counts.fn = len(gts) - counts.tp
    return counts


@dataclass(frozen=True)
class EvalReport:
    fold: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    recall_micro: float
    recall_macro: float
    tp_micro: int
    gt_micro: int
    tp_macro: int
    gt_macro: int

    def table_row(self) -> str:
        return (
            f"{self.fold:<12} {self.recall_micro:7.3f} {self.recall_macro:8.3f} "
            f"{self.recall:6.3f} {self.precision:6.3f} {self.f1:6.3f}"
        )


TABLE_HEADER = f"{'fold':<12} {'ME-REC':>7} {'MaE-REC':>8} {'REC':>6} {'PRE':>6} {'F1':>6}"


def score(counts: MatchCounts, fold: str = "all") -> EvalReport:
    """Precision/recall/F1 with zero-denominator cases scored as 0."""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall > 0.0
        else 0.0
    )

    def class_recall(label):
        total = counts.gt_by_class[label]
        return counts.tp_by_class[label] / total if total else 0.0

    return EvalReport(
        fold=fold,
        tp=counts.tp,
        fp=counts.fp,
        fn=counts.fn,
        precision=precision,
        recall=recall,
        f1=f1,
        recall_micro=class_recall(MICRO),
        recall_macro=class_recall(MACRO),
        tp_micro=counts.tp_by_class[MICRO],
        gt_micro=counts.gt_by_class[MICRO],
        tp_macro=counts.tp_by_class[MACRO],
        gt_macro=counts.gt_by_class[MACRO],
    )


def aggregate(fold_counts: list[MatchCounts]) -> EvalReport:
    return score(merge_counts(fold_counts), fold="aggregate")
