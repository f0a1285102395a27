"""Snippet planning and feature assembly for one video.

A video of L frames is cut into overlapping snippets of ``snippet_len``
frames advanced by ``snippet_len - overlap`` frames. The final frame is
dropped before planning (flow-style features pair adjacent frames, so the
last frame has no successor), and any frames past the last full snippet are
ignored by the floor division.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DurationExceededError, ShapeError, TooShortVideoError


@dataclass(frozen=True)
class SnippetPlan:
    """Geometry of the snippet grid for one video."""

    frame_count: int
    snippet_len: int
    overlap: int
    stride: int
    usable_frames: int
    count: int


def plan_snippets(frame_count: int, snippet_len: int, overlap: int) -> SnippetPlan:
    if snippet_len < 1:
        raise ShapeError(f"snippet_len must be >= 1, got {snippet_len}")
    if not 0 <= overlap < snippet_len:
        raise ShapeError(f"overlap must be in [0, {snippet_len}), got {overlap}")
    usable = frame_count - 1
    if usable < snippet_len:
        raise TooShortVideoError(
            f"video has {frame_count} frames; needs at least {snippet_len + 1}"
        )
    stride = snippet_len - overlap
    count = 1 + (usable - snippet_len) // stride
    return SnippetPlan(frame_count, snippet_len, overlap, stride, usable, count)


def timestamp_to_frames(plan: SnippetPlan, t: int) -> tuple[int, int]:
    """Inclusive frame span covered by snippet ``t``."""
    if not 0 <= t < plan.count:
        raise ShapeError(f"timestamp {t} outside [0, {plan.count})")
    start = t * plan.stride
    return start, start + plan.snippet_len - 1


def pool_snippets(frames: np.ndarray, plan: SnippetPlan) -> np.ndarray:
    """Average frame-level features over each snippet's span.

    Stands in for a pooled clip embedding: input (L, D) frame features, output
    (count, D) snippet features.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] != plan.frame_count:
        raise ShapeError(
            f"frame features {frames.shape} vs expected ({plan.frame_count}, D)"
        )
    windows = np.lib.stride_tricks.sliding_window_view(
        frames[: plan.usable_frames], plan.snippet_len, axis=0
    )
    return windows[:: plan.stride][: plan.count].mean(axis=-1)


def concat_streams(image: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Concatenate the two per-snippet feature streams along the width axis."""
    image = np.asarray(image, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    if image.shape != flow.shape:
        raise ShapeError(f"stream shapes differ: {image.shape} vs {flow.shape}")
    return np.concatenate([image, flow], axis=1)


@dataclass
class FeatureSequence:
    """Snippet features padded to the fixed duration plus a validity mask."""

    features: np.ndarray  # (duration, width) float64
    mask: np.ndarray  # (duration,) float64 of {0.0, 1.0}, ones prefix
    valid: int


def pad_to_fixed(features: np.ndarray, duration: int) -> FeatureSequence:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"expected (T, width) features, got {features.shape}")
    t, width = features.shape
    if t > duration:
        raise DurationExceededError(
            f"video yields {t} snippet timestamps; fixed duration is {duration}"
        )
    padded = np.zeros((duration, width), dtype=np.float64)
    padded[:t] = features
    mask = np.zeros(duration, dtype=np.float64)
    mask[:t] = 1.0
    return FeatureSequence(padded, mask, t)
