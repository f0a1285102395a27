"""Training, spotting, and leave-one-subject-out orchestration."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import fileio
from .autodiff import Tape, backward
from .config import RunConfig
from .errors import DataError, DurationExceededError, NumericError, ShapeError
from .labels import GroundTruth, TimestampLabels, encode_targets
from .losses import total_loss
from .network import SpotterParams, forward, init_params
from .optim import Adam
from .proposals import Proposal, decode_video
from .scoring import EvalReport, MatchCounts, match, merge_counts, score
from .snippets import (
    FeatureSequence,
    SnippetPlan,
    concat_streams,
    pad_to_fixed,
    plan_snippets,
    pool_snippets,
)
from .synthetic import split_loso

log = logging.getLogger("exspot")


@dataclass
class VideoTensors:
    """Everything the loops need for one video, computed once."""

    video_id: str
    subject_id: str
    fps: float
    plan: SnippetPlan
    seq: FeatureSequence
    targets: TimestampLabels
    gts: list[GroundTruth]


def prepare_video(
    record: fileio.VideoRecord,
    image: np.ndarray,
    flow: np.ndarray,
    cfg: RunConfig,
) -> VideoTensors:
    plan = plan_snippets(record.frame_count, cfg.snippet_len, cfg.overlap)
    pooled = concat_streams(pool_snippets(image, plan), pool_snippets(flow, plan))
    expected = 2 * cfg.stream_width
    if pooled.shape[1] != expected:
        raise ShapeError(
            f"{record.video_id}: feature width {pooled.shape[1]} vs configured {expected}"
        )
    seq = pad_to_fixed(pooled, cfg.duration)
    targets = encode_targets(record.gts, plan, cfg.duration, video_id=record.video_id)
    return VideoTensors(
        record.video_id, record.subject_id, record.fps, plan, seq, targets, record.gts
    )


def prepare_dataset(
    data_dir: Path, cfg: RunConfig, video_ids: set[str] | None = None
) -> list[VideoTensors]:
    """Load and snippetize the manifest's videos; over-long videos are
    reported and skipped rather than truncated."""
    records = fileio.load_dataset(data_dir)
    if video_ids is not None:
        missing = video_ids - {r.video_id for r in records}
        if missing:
            raise DataError(f"video ids not in manifest: {sorted(missing)}")
        records = [r for r in records if r.video_id in video_ids]
    prepared = []
    for record in records:
        image, flow = fileio.load_record_features(data_dir, record)
        try:
            prepared.append(prepare_video(record, image, flow, cfg))
        except DurationExceededError as exc:
            log.warning("skipping %s: %s", record.video_id, exc)
    if not prepared:
        raise DataError("no usable videos after preprocessing")
    return prepared


@dataclass
class TrainResult:
    params: SpotterParams
    adam: Adam
    epochs_run: int
    history: list[dict] = field(default_factory=list)
    train_state: dict = field(default_factory=dict)


def _video_loss(params, cfg, run_cfg, vt):
    probs = forward(vt.seq, params, cfg)
    total, focal, dice = total_loss(
        probs, vt.targets.labels, vt.targets.mask, run_cfg.loss_config()
    )
    # the logged dice figure is its contribution to the total, so the two
    # reported terms always sum to the reported loss
    return total, float(focal.data), float(dice.data) * run_cfg.dice_weight


def _batch_gradients_serial(params, named, cfg, run_cfg, batch):
    stats = []
    for vt in batch:
        with Tape():
            total, focal, dice = _video_loss(params, cfg, run_cfg, vt)
            backward(total)
        stats.append((float(total.data), focal, dice))
    return stats


def _batch_gradients_threaded(params, named, cfg, run_cfg, batch, pool):
    def worker(vt):
        grads: dict = {}
        with Tape():
            total, focal, dice = _video_loss(params, cfg, run_cfg, vt)
            backward(total, into=grads)
        return (float(total.data), focal, dice), grads

    results = list(pool.map(worker, batch))
    for _, grads in results:
        for tensor, g in grads.items():
            tensor.grad = g if tensor.grad is None else tensor.grad + g
    return [stat for stat, _ in results]


def train_spotter(
    videos: list[VideoTensors],
    run_cfg: RunConfig,
    resume: fileio.Checkpoint | None = None,
    emit=None,
) -> TrainResult:
    """Mini-batch Adam training with the plateau learning-rate switch.

    ``emit`` receives one machine-readable ``key=value`` line per epoch.
    """
    cfg = run_cfg.spotter_config()
    rng = np.random.default_rng(run_cfg.seed)
    if resume is not None:
        params = resume.params
        for _, tensor in params.named():
            tensor.requires_grad = True
    else:
        params = init_params(cfg, rng)
    named = params.as_dict()
    adam = Adam(
        named,
        lr=run_cfg.learning_rate,
        beta1=run_cfg.beta1,
        beta2=run_cfg.beta2,
        eps=run_cfg.adam_eps,
    )
    start_epoch = 0
    best = np.inf
    stall = 0
    boosts = 0
    if resume is not None:
        if resume.adam_arrays is not None:
            adam.load_state_arrays(resume.adam_arrays, resume.adam_scalars["step_count"])
            adam.lr = float(resume.adam_scalars["lr"])
        start_epoch = resume.epoch
        state = resume.train_state
        best = float(state.get("best_loss", np.inf))
        stall = int(state.get("stall", 0))
        boosts = int(state.get("boosts", 0))

    pool = ThreadPoolExecutor(run_cfg.threads) if run_cfg.threads > 1 else None
    history = []
    try:
        for epoch in range(start_epoch, run_cfg.epochs):
            order = rng.permutation(len(videos))
            epoch_stats = []
            for i in range(0, len(order), run_cfg.batch_size):
                batch = [videos[j] for j in order[i : i + run_cfg.batch_size]]
                adam.zero_grad()
                if pool is not None:
                    stats = _batch_gradients_threaded(
                        params, named, cfg, run_cfg, batch, pool
                    )
                else:
                    stats = _batch_gradients_serial(params, named, cfg, run_cfg, batch)
                for (value, _, _), vt in zip(stats, batch):
                    if not np.isfinite(value):
                        raise NumericError(
                            f"non-finite loss at epoch {epoch + 1}, video {vt.video_id}"
                        )
                inv = 1.0 / len(batch)
                for tensor in named.values():
                    if tensor.grad is not None:
                        tensor.grad = tensor.grad * inv
                adam.step()
                epoch_stats.extend(stats)
            mean_total = float(np.mean([s[0] for s in epoch_stats]))
            mean_focal = float(np.mean([s[1] for s in epoch_stats]))
            mean_dice = float(np.mean([s[2] for s in epoch_stats]))
            boosted = 0
            if run_cfg.plateau_boost:
                improved = not np.isfinite(best) or (
                    (best - mean_total) / max(best, 1e-12) >= run_cfg.plateau_tol
                )
                stall = 0 if improved else stall + 1
                if stall >= run_cfg.plateau_patience and boosts < run_cfg.plateau_max_boosts:
                    adam.lr *= run_cfg.plateau_factor
                    boosts += 1
                    stall = 0
                    boosted = 1
            best = min(best, mean_total)
            row = {
                "epoch": epoch + 1,
                "loss": mean_total,
                "focal": mean_focal,
                "dice": mean_dice,
                "lr": adam.lr,
                "lr_boost": boosted,
            }
            history.append(row)
            if emit is not None:
                emit(
                    f"epoch={row['epoch']} loss={row['loss']:.12f} "
                    f"focal={row['focal']:.12f} dice={row['dice']:.12f} "
                    f"lr={row['lr']:.3e} lr_boost={row['lr_boost']}"
                )
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(
        params=params,
        adam=adam,
        epochs_run=run_cfg.epochs,
        history=history,
        train_state={"best_loss": best, "stall": stall, "boosts": boosts},
    )


def spot_videos(
    videos: list[VideoTensors],
    params: SpotterParams,
    run_cfg: RunConfig,
) -> tuple[dict[str, list[Proposal]], dict[str, np.ndarray]]:
    """Forward every video without recording and decode proposals."""
    cfg = run_cfg.spotter_config()
    decode_cfg = run_cfg.decode_config()
    proposals = {}
    probabilities = {}
    for vt in videos:
        probs = forward(vt.seq, params, cfg).data
        proposals[vt.video_id] = decode_video(
            probs, vt.seq.mask, vt.plan, vt.fps, decode_cfg
        )
        probabilities[vt.video_id] = probs[: vt.seq.valid].copy()
    return proposals, probabilities


def match_videos(
    proposals: dict[str, list[Proposal]],
    gts: dict[str, list[GroundTruth]],
    iou_threshold: float,
) -> MatchCounts:
    """Per-video greedy matching, counts summed over the mapping's videos."""
    unknown = set(proposals) - set(gts)
    if unknown:
        raise DataError(f"proposals reference unknown video ids: {sorted(unknown)}")
    parts = []
    for vid in sorted(gts):
        parts.append(match(proposals.get(vid, []), gts[vid], iou_threshold))
    return merge_counts(parts)


@dataclass
class FoldOutcome:
    fold: str
    counts: MatchCounts
    report: EvalReport
    proposals: dict[str, list[Proposal]]
    probabilities: dict[str, np.ndarray]
    history: list[dict]


def run_loso(
    data_dir: Path,
    run_cfg: RunConfig,
    out_dir: Path | None = None,
    emit=None,
) -> tuple[list[FoldOutcome], EvalReport]:
    """Train one model per held-out subject, spot its videos, score micro-
    aggregated counts across folds."""
    videos = prepare_dataset(data_dir, run_cfg)
    folds = split_loso(videos)
    by_id = {vt.video_id: vt for vt in videos}
    outcomes = []
    for fold_idx, fold in enumerate(folds):
        fold_cfg = _reseeded(run_cfg, fold_idx)
        train_set = [by_id[v] for v in fold.train_ids]
        test_set = [by_id[v] for v in fold.test_ids]
        if emit is not None:
            emit(f"fold={fold.held_out} train={len(train_set)} test={len(test_set)}")
        result = train_spotter(train_set, fold_cfg, emit=emit)
        proposals, probabilities = spot_videos(test_set, result.params, fold_cfg)
        counts = match_videos(
            proposals,
            {vt.video_id: vt.gts for vt in test_set},
            run_cfg.iou_threshold,
        )
        report = score(counts, fold=fold.held_out)
        outcomes.append(
            FoldOutcome(
                fold.held_out, counts, report, proposals, probabilities, result.history
            )
        )
        if out_dir is not None:
            fold_dir = Path(out_dir) / f"fold_{fold.held_out}"
            fold_dir.mkdir(parents=True, exist_ok=True)
            fileio.save_checkpoint(
                fold_dir / "checkpoint.ckpt",
                fold_cfg.spotter_config(),
                result.params,
                epoch=result.epochs_run,
                adam=result.adam,
                train_state=result.train_state,
            )
            fileio.write_proposals(fold_dir / "proposals.jsonl", proposals)
            fileio.write_probabilities(fold_dir / "probabilities.jsonl", probabilities)
            fileio.write_report(fold_dir / "report", [report])
    total = score(merge_counts([o.counts for o in outcomes]), fold="aggregate")
    if out_dir is not None:
        fileio.write_report(
            Path(out_dir) / "report", [o.report for o in outcomes] + [total]
        )
    return outcomes, total


def _reseeded(run_cfg: RunConfig, fold_idx: int) -> RunConfig:
    mixed = np.random.SeedSequence([run_cfg.seed, fold_idx]).generate_state(1)[0]
    return replace(run_cfg, seed=int(mixed))
