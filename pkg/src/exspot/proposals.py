"""Turn per-timestamp probabilities into frame-level interval proposals.

Timestamps whose probability strictly exceeds the threshold (and which are
valid under the mask) are kept; maximal consecutive runs become proposals.
A run maps back to frames by inverting the any-overlap labeling: the widest
interval whose labeled timestamps are exactly this run. Runs too short to be
consistent with any interval (possible once snippets overlap) are noise and
are dropped. Class is assigned by duration, and confidence is the mean
probability over the run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .labels import MACRO, MICRO
from .snippets import SnippetPlan, timestamp_to_frames


@dataclass(frozen=True)
class DecodeConfig:
    threshold: float = 0.05
    me_max_seconds: float = 0.5


@dataclass(frozen=True)
class Proposal:
    onset: int
    offset: int
    label: str
    confidence: float


def select_valid(probs: np.ndarray, mask: np.ndarray, threshold: float) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if probs.shape != mask.shape or probs.ndim != 1:
        raise ShapeError(f"probs {probs.shape} vs mask {mask.shape}")
    return (probs > threshold) & (mask > 0.5)


def merge_runs(selected: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of consecutive True values as inclusive index pairs."""
    selected = np.asarray(selected, dtype=bool)
    runs = []
    start = None
    for i, flag in enumerate(selected):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(selected) - 1))
    return runs


def run_to_proposal(
    run: tuple[int, int],
    probs: np.ndarray,
    plan: SnippetPlan,
    fps: float,
    cfg: DecodeConfig,
) -> Proposal | None:
    """The widest interval whose any-overlap labeling is exactly this run.

    The first run timestamp pins the onset to within one stride (the interval
    must touch that snippet but not the one before), and likewise the last
    timestamp pins the offset. At the sequence edges the clipping in the
    labeler loosens the constraint, so the span extends to the snippet border.
    When the snippets overlap, a run can be shorter than any interval's
    labeling; such runs have no preimage and yield ``None``.
    """
    t_first, t_last = run
    if t_first == 0:
        onset = 0
    else:
        onset = t_first * plan.stride + plan.overlap
    if t_last == plan.count - 1:
        _, offset = timestamp_to_frames(plan, t_last)
    else:
        offset = t_last * plan.stride + plan.stride - 1
    if onset > offset:
        return None
    duration_s = (offset - onset + 1) / fps
    label = MICRO if duration_s <= cfg.me_max_seconds else MACRO
    confidence = float(probs[t_first : t_last + 1].mean())
    return Proposal(onset, offset, label, confidence)


def decode_video(
    probs: np.ndarray,
    mask: np.ndarray,
    plan: SnippetPlan,
    fps: float,
    cfg: DecodeConfig,
) -> list[Proposal]:
    """All proposals for one video, ordered by onset frame."""
    selected = select_valid(probs, mask, cfg.threshold)
    probs = np.asarray(probs, dtype=np.float64)
    out = []
    for run in merge_runs(selected):
        proposal = run_to_proposal(run, probs, plan, fps, cfg)
        if proposal is not None:
            out.append(proposal)
    return out
