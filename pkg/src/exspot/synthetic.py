"""Deterministic synthetic benchmark with planted expression intervals.

Each video is zero-mean unit-variance gaussian noise in both feature streams.
Every planted interval picks a direction vector built from a per-class anchor
plus an instance-specific perturbation (so a linear probe on snippet features
has a consistent signal to find), then adds a triangular temporal envelope
along that direction:

* image-like stream: envelope value per frame, scaled by ``snr``;
* flow-like stream: the envelope's discrete temporal derivative, same scale.

The envelope rises from the onset to its maximum at the apex (interval
midpoint) and falls to the offset; it is strictly positive inside the
interval and zero outside. Intervals are pairwise disjoint with a configured
minimum background gap and a margin from both video edges.

Determinism: every video gets its own PCG64 generator seeded by the global
seed and a SHA-256 hash of the video id, so regeneration is bit-identical on
any platform, and per-video content does not depend on generation order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, PackingError
from .labels import GroundTruth, MACRO, MICRO
from .snippets import plan_snippets, pool_snippets, concat_streams, timestamp_to_frames


@dataclass(frozen=True)
class SynthSpec:
    subjects: int = 3
    videos_per_subject: int = 4
    fps: float = 30.0
    frame_count: tuple[int, int] = (900, 1020)
    micro_per_video: tuple[int, int] = (1, 2)
    macro_per_video: tuple[int, int] = (2, 3)
    micro_frames: tuple[int, int] = (12, 15)
    macro_frames: tuple[int, int] = (16, 22)
    feature_dim: int = 16
    snr: float = 3.0
    min_gap_frames: int = 24  # keep >= the snippet length used downstream
    direction_spread: float = 0.05
    seed: int = 7

    def validate(self) -> None:
        for name in (
            "frame_count", "micro_per_video", "macro_per_video",
            "micro_frames", "macro_frames",
        ):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ConfigError(f"{name} range ({lo}, {hi}) is invalid")
        micro_cap = int(0.5 * self.fps)
        macro_cap = int(4.0 * self.fps)
        if self.micro_frames[1] > micro_cap:
            raise ConfigError(
                f"micro durations up to {self.micro_frames[1]} frames exceed "
                f"0.5 s at {self.fps} fps ({micro_cap} frames)"
            )
        if self.micro_frames[0] < 1:
            raise ConfigError("micro durations must be >= 1 frame")
        if self.macro_frames[0] <= micro_cap or self.macro_frames[1] > macro_cap:
            raise ConfigError(
                f"macro durations must lie in ({micro_cap}, {macro_cap}] frames, "
                f"got {self.macro_frames}"
            )
        if self.subjects < 1 or self.videos_per_subject < 1:
            raise ConfigError("need at least one subject and one video each")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if self.snr < 0.0:
            raise ConfigError("snr must be >= 0")
        if self.min_gap_frames < 1:
            raise ConfigError("min_gap_frames must be >= 1")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth spec keys: {sorted(unknown)}")
        kwargs = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            v = d[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
        spec = cls(**kwargs)
        spec.validate()
        return spec


@dataclass
class SynthVideo:
    video_id: str
    subject_id: str
    fps: float
    frame_count: int
    gts: list[GroundTruth]
    image: np.ndarray  # (L, D) float64
    flow: np.ndarray  # (L, D) float64


def _video_rng(seed: int, video_id: str) -> np.random.Generator:
    digest = hashlib.sha256(video_id.encode("utf-8")).digest()
    tag = int.from_bytes(digest[:8], "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag])))


def class_anchors(spec: SynthSpec) -> dict[str, np.ndarray]:
    """Unit per-class anchor directions, fixed by the global seed.

    Both anchors share a dominant base direction plus a smaller class-specific
    orthogonal offset, so activity of either class projects strongly onto one
    axis while the classes stay distinguishable.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 0xA])))
    raw = rng.standard_normal((3, spec.feature_dim))
    q, _ = np.linalg.qr(raw.T)
    base, off_micro, off_macro = q[:, 0], q[:, 1], q[:, 2]
    mix = 0.3
    micro = base + mix * off_micro
    macro = base + mix * off_macro
    return {
        MICRO: micro / np.linalg.norm(micro),
        MACRO: macro / np.linalg.norm(macro),
    }


def envelope(length: int) -> np.ndarray:
    """Triangular profile: maximum 1.0 at the midpoint, positive throughout."""
    apex = (length - 1) / 2.0
    half = apex + 1.0
    pos = np.arange(length, dtype=np.float64)
    return 1.0 - np.abs(pos - apex) / half


def _place_intervals(
    rng: np.random.Generator, spec: SynthSpec, frame_count: int, video_id: str
) -> list[GroundTruth]:
    n_micro = int(rng.integers(spec.micro_per_video[0], spec.micro_per_video[1] + 1))
    n_macro = int(rng.integers(spec.macro_per_video[0], spec.macro_per_video[1] + 1))
    items = [
        (MICRO, int(rng.integers(spec.micro_frames[0], spec.micro_frames[1] + 1)))
        for _ in range(n_micro)
    ] + [
        (MACRO, int(rng.integers(spec.macro_frames[0], spec.macro_frames[1] + 1)))
        for _ in range(n_macro)
    ]
    rng.shuffle(items)
    n = len(items)
    margin = spec.min_gap_frames
    usable = frame_count - 1  # the final frame is dropped downstream
    slack = usable - 2 * margin - sum(d for _, d in items) - (n - 1) * spec.min_gap_frames
    if slack < 0:
        raise PackingError(
            f"video {video_id}: {n} intervals do not fit in {frame_count} frames "
            f"(short by {-slack})"
        )
    cuts = np.sort(rng.integers(0, slack + 1, size=n))
    gts = []
    pos = margin
    prev_cut = 0
    for (label, dur), cut in zip(items, cuts):
        pos += int(cut) - prev_cut
        prev_cut = int(cut)
        gts.append(GroundTruth(pos, pos + dur - 1, label))
        pos += dur + spec.min_gap_frames
    return sorted(gts, key=lambda g: g.onset)


def generate_video(
    spec: SynthSpec, subject_idx: int, video_idx: int, anchors: dict[str, np.ndarray]
) -> SynthVideo:
    subject_id = f"s{subject_idx:02d}"
    video_id = f"{subject_id}_v{video_idx:02d}"
    rng = _video_rng(spec.seed, video_id)
    frame_count = int(rng.integers(spec.frame_count[0], spec.frame_count[1] + 1))
    gts = _place_intervals(rng, spec, frame_count, video_id)
    d = spec.feature_dim
    image = rng.standard_normal((frame_count, d))
    flow = rng.standard_normal((frame_count, d))
    track = np.zeros((frame_count, d))
    for gt in gts:
        direction = anchors[gt.label] + spec.direction_spread * rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        env = envelope(gt.offset - gt.onset + 1) * spec.snr
        track[gt.onset : gt.offset + 1] += env[:, None] * direction
    image += track
    flow[1:] += np.diff(track, axis=0)
    flow[0] += track[0]
    return SynthVideo(video_id, subject_id, spec.fps, frame_count, gts, image, flow)


def generate(spec: SynthSpec) -> list[SynthVideo]:
    spec.validate()
    anchors = class_anchors(spec)
    return [
        generate_video(spec, s, v, anchors)
        for s in range(spec.subjects)
        for v in range(spec.videos_per_subject)
    ]


def foreground_share(videos: list[SynthVideo]) -> float:
    fg = sum(gt.offset - gt.onset + 1 for v in videos for gt in v.gts)
    total = sum(v.frame_count for v in videos)
    return fg / total


@dataclass(frozen=True)
class LosoFold:
    held_out: str
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


def split_loso(metas: list) -> list[LosoFold]:
    """One fold per subject, sorted by subject id; needs >= 2 subjects.

    Accepts any objects with ``subject_id`` and ``video_id`` attributes.
    """
    subjects: dict[str, list[str]] = {}
    for m in metas:
        subjects.setdefault(m.subject_id, []).append(m.video_id)
    if len(subjects) < 2:
        raise ConfigError(f"leave-one-subject-out needs >= 2 subjects, got {len(subjects)}")
    folds = []
    ordered = sorted(subjects)
    for held in ordered:
        test = tuple(sorted(subjects[held]))
        train = tuple(
            vid for s in ordered if s != held for vid in sorted(subjects[s])
        )
        folds.append(LosoFold(held, train, test))
    return folds


def probe_snippet_sets(
    videos: list[SynthVideo], snippet_len: int, overlap: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pooled features, binary label, and video index for unambiguous snippets.

    Positive snippets lie entirely inside one ground-truth interval; negative
    snippets touch none. Partially overlapping snippets are skipped: they are
    genuinely ambiguous and would make any accuracy figure meaningless.
    """
    feats, labels, vidx = [], [], []
    for vi, video in enumerate(videos):
        plan = plan_snippets(video.frame_count, snippet_len, overlap)
        pooled = concat_streams(
            pool_snippets(video.image, plan), pool_snippets(video.flow, plan)
        )
        for t in range(plan.count):
            lo, hi = timestamp_to_frames(plan, t)
            inside = any(g.onset <= lo and hi <= g.offset for g in video.gts)
            touches = any(g.onset <= hi and lo <= g.offset for g in video.gts)
            if inside or not touches:
                feats.append(pooled[t])
                labels.append(1.0 if inside else 0.0)
                vidx.append(vi)
    return np.asarray(feats), np.asarray(labels), np.asarray(vidx)


def _fit_logistic(x_train, y_train, iterations):
    w = np.zeros(x_train.shape[1])
    b = 0.0
    for _ in range(iterations):
        z = x_train @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        err = p - y_train
        w -= 0.5 * (x_train.T @ err / len(err) + 1e-4 * w)
        b -= 0.5 * float(err.mean())
    return w, b


def linear_probe_accuracy(
    videos: list[SynthVideo],
    snippet_len: int,
    overlap: int,
    seed: int = 0,
    iterations: int = 400,
    folds: int = 4,
) -> float:
    """Held-out accuracy of a logistic regression on single-snippet features.

    Balanced classes, cross-validated over video-level folds, plain gradient
    descent on the standardized features. Used to verify the generator's snr
    leaves the snippet classes separable before any end-to-end claim is made.
    """
    feats, labels, vidx = probe_snippet_sets(videos, snippet_len, overlap)
    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(labels == 1.0)
    negs = np.flatnonzero(labels == 0.0)
    take = min(len(pos), len(negs))
    keep = np.concatenate([pos, rng.permutation(negs)[:take]])
    feats, labels, vidx = feats[keep], labels[keep], vidx[keep]
    video_order = rng.permutation(np.unique(vidx))
    folds = min(folds, len(video_order))
    correct = 0
    total = 0
    for fold in range(folds):
        test_videos = set(video_order[fold::folds].tolist())
        in_test = np.isin(vidx, list(test_videos))
        x_train, y_train = feats[~in_test], labels[~in_test]
        x_test, y_test = feats[in_test], labels[in_test]
        mu = x_train.mean(axis=0)
        sd = x_train.std(axis=0) + 1e-9
        w, b = _fit_logistic((x_train - mu) / sd, y_train, iterations)
        pred = ((x_test - mu) / sd) @ w + b > 0.0
        correct += int((pred == (y_test == 1.0)).sum())
        total += len(y_test)
    return correct / total
