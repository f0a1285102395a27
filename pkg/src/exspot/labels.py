"""Binary per-timestamp training targets from ground-truth intervals.

A snippet timestamp is foreground when its frame span shares at least one
frame with any annotated interval. Class is not encoded; it is recovered from
interval duration when proposals are decoded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AnnotationError, EmptyMaskError
from .snippets import SnippetPlan

MICRO = "ME"
MACRO = "MaE"
CLASSES = (MICRO, MACRO)


@dataclass(frozen=True)
class GroundTruth:
    """Inclusive expression interval [onset, offset] in frame indices."""

    onset: int
    offset: int
    label: str

    def __post_init__(self):
        if self.label not in CLASSES:
            raise AnnotationError(f"unknown class {self.label!r}; expected {CLASSES}")
        if self.onset < 0 or self.offset < self.onset:
            raise AnnotationError(
                f"bad interval [{self.onset}, {self.offset}] for class {self.label}"
            )


@dataclass
class TimestampLabels:
    labels: np.ndarray  # (duration,) float64 of {0.0, 1.0}
    mask: np.ndarray  # (duration,) float64, ones prefix
    valid: int


def encode_targets(
    gts: list[GroundTruth],
    plan: SnippetPlan,
    duration: int,
    video_id: str | None = None,
) -> TimestampLabels:
    """Mark every snippet whose span intersects any ground-truth interval."""
    where = f" in video {video_id}" if video_id else ""
    labels = np.zeros(duration, dtype=np.float64)
    for gt in gts:
        if gt.offset > plan.usable_frames - 1:
            raise AnnotationError(
                f"interval [{gt.onset}, {gt.offset}]{where} exceeds usable frame "
                f"range [0, {plan.usable_frames - 1}]"
            )
        # First snippet whose last frame reaches the onset, last snippet whose
        # first frame still touches the offset.
        t_lo = max(0, -((gt.onset - plan.snippet_len + 1) // -plan.stride))
        t_hi = min(plan.count - 1, gt.offset // plan.stride)
        if t_lo <= t_hi:
            labels[t_lo : t_hi + 1] = 1.0
    mask = np.zeros(duration, dtype=np.float64)
    mask[: plan.count] = 1.0
    return TimestampLabels(labels, mask, plan.count)


def foreground_ratio(enc: TimestampLabels) -> float:
    valid = enc.mask > 0.5
    if not valid.any():
        raise EmptyMaskError("no valid timestamps")
    return float(enc.labels[valid].mean())
