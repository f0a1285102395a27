import logging
from dataclasses import replace

import numpy as np
import pytest

from exspot.config import RunConfig
from exspot.errors import DataError, ShapeError
from exspot.fileio import load_checkpoint, save_checkpoint, write_dataset
from exspot.training import (
    match_videos,
    prepare_dataset,
    prepare_video,
    run_loso,
    spot_videos,
    train_spotter,
)
from exspot.synthetic import SynthSpec, generate

TINY_RUN = RunConfig(
    stream_width=4, embed_dim=8, duration=128, embed_blocks=1,
    encoder_blocks=1, pyramid_blocks=1, heads=2, window=6,
    learning_rate=1e-3, epochs=5, batch_size=4, plateau_boost=False,
    seed=11,
)

TINY_SPEC = SynthSpec(
    subjects=2, videos_per_subject=2, frame_count=(220, 250),
    feature_dim=4, min_gap_frames=16,
)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tinydata")
    write_dataset(generate(TINY_SPEC), out)
    return out


@pytest.fixture(scope="module")
def dataset(data_dir):
    return prepare_dataset(data_dir, TINY_RUN)


def test_prepare_video_rejects_width_mismatch(data_dir):
    from exspot.fileio import load_dataset, load_record_features

    record = load_dataset(data_dir)[0]
    image, flow = load_record_features(data_dir, record)
    wrong = replace(TINY_RUN, stream_width=8)
    with pytest.raises(ShapeError):
        prepare_video(record, image, flow, wrong)


def test_prepare_dataset_skips_overlong_videos(data_dir, caplog):
    cramped = replace(TINY_RUN, duration=8)
    with pytest.raises(DataError):
        prepare_dataset(data_dir, cramped)
    # leave room for the shortest videos only
    shortest = min(vt_frames for vt_frames in _frame_counts(data_dir))
    barely = replace(TINY_RUN, duration=_timestamps(shortest))
    with caplog.at_level(logging.WARNING, logger="exspot"):
        kept = prepare_dataset(data_dir, barely)
    assert 1 <= len(kept) < 4
    assert any("skipping" in r.message for r in caplog.records)


def _frame_counts(data_dir):
    from exspot.fileio import load_dataset

    return [r.frame_count for r in load_dataset(data_dir)]


def _timestamps(frame_count):
    from exspot.snippets import plan_snippets

    return plan_snippets(frame_count, TINY_RUN.snippet_len, TINY_RUN.overlap).count


def test_prepare_dataset_unknown_id(data_dir):
    with pytest.raises(DataError):
        prepare_dataset(data_dir, TINY_RUN, video_ids={"s09_v00"})


def test_five_epoch_loss_strictly_decreases(dataset):
    result = train_spotter(dataset, TINY_RUN)
    losses = [row["loss"] for row in result.history]
    assert len(losses) == 5
    for a, b in zip(losses, losses[1:]):
        assert b < a


def test_logged_terms_sum_to_loss(dataset):
    cfg = replace(TINY_RUN, epochs=2, dice_weight=0.7)
    result = train_spotter(dataset, cfg)
    for row in result.history:
        assert row["loss"] == pytest.approx(row["focal"] + row["dice"], abs=1e-12)


def test_zero_dice_weight_logs_zero(dataset):
    cfg = replace(TINY_RUN, epochs=2, dice_weight=0.0)
    result = train_spotter(dataset, cfg)
    assert all(row["dice"] == 0.0 for row in result.history)
    assert all(row["loss"] == pytest.approx(row["focal"], abs=1e-15)
               for row in result.history)


def test_plateau_boost_schedule(dataset):
    # a relative-improvement bar nothing can clear: first epoch counts as
    # improvement (nothing to compare against), then every epoch stalls
    cfg = replace(TINY_RUN, epochs=9, learning_rate=1e-8, plateau_boost=True,
                  plateau_patience=2, plateau_tol=10.0, plateau_factor=10.0,
                  plateau_max_boosts=3)
    result = train_spotter(dataset, cfg)
    flags = [row["lr_boost"] for row in result.history]
    assert flags == [0, 0, 1, 0, 1, 0, 1, 0, 0]
    assert result.history[-1]["lr"] == pytest.approx(1e-5)
    assert result.train_state["boosts"] == 3


def test_plateau_first_epoch_cannot_stall(dataset):
    cfg = replace(TINY_RUN, epochs=3, learning_rate=1e-8, plateau_boost=True,
                  plateau_patience=1, plateau_tol=10.0)
    result = train_spotter(dataset, cfg)
    assert [row["lr_boost"] for row in result.history] == [0, 1, 1]


def test_plateau_disabled_keeps_lr(dataset):
    result = train_spotter(dataset, replace(TINY_RUN, epochs=3))
    assert all(row["lr"] == TINY_RUN.learning_rate for row in result.history)


def test_threaded_gradients_match_serial(dataset):
    cfg = replace(TINY_RUN, epochs=2)
    serial = train_spotter(dataset, cfg)
    threaded = train_spotter(dataset, replace(cfg, threads=3))
    for a, b in zip(serial.history, threaded.history):
        assert a["loss"] == b["loss"]
    for (name, ta), (_, tb) in zip(serial.params.named(), threaded.params.named()):
        np.testing.assert_array_equal(ta.data, tb.data, err_msg=name)


def test_resume_continues_epoch_numbering(dataset, tmp_path):
    cfg = replace(TINY_RUN, epochs=2)
    first = train_spotter(dataset, cfg)
    path = tmp_path / "mid.ckpt"
    save_checkpoint(path, cfg.spotter_config(), first.params,
                    epoch=first.epochs_run, adam=first.adam,
                    train_state=first.train_state)
    ckpt = load_checkpoint(path, expect=cfg.spotter_config())
    resumed = train_spotter(dataset, replace(cfg, epochs=4), resume=ckpt)
    assert [row["epoch"] for row in resumed.history] == [3, 4]
    assert resumed.adam.step_count == 4  # one batch per epoch here
    assert all(np.isfinite(row["loss"]) for row in resumed.history)


def test_spot_videos_outputs(dataset):
    result = train_spotter(dataset, replace(TINY_RUN, epochs=1))
    proposals, probabilities = spot_videos(dataset, result.params, TINY_RUN)
    assert set(proposals) == {vt.video_id for vt in dataset}
    for vt in dataset:
        assert probabilities[vt.video_id].shape == (vt.plan.count,)
        for p in proposals[vt.video_id]:
            assert 0 <= p.onset <= p.offset < vt.plan.usable_frames + 1


def test_match_videos_rejects_unknown_ids(dataset):
    gts = {vt.video_id: vt.gts for vt in dataset}
    with pytest.raises(DataError):
        match_videos({"mystery": []}, gts, 0.5)
    counts = match_videos({vt.video_id: [] for vt in dataset}, gts, 0.5)
    assert counts.tp == 0
    assert counts.fn == sum(len(g) for g in gts.values())


def test_run_loso_aggregates_and_writes(data_dir, tmp_path):
    cfg = replace(TINY_RUN, epochs=1)
    out = tmp_path / "loso"
    outcomes, total = run_loso(data_dir, cfg, out_dir=out)
    assert [o.fold for o in outcomes] == ["s00", "s01"]
    assert total.fold == "aggregate"
    assert total.tp == sum(o.counts.tp for o in outcomes)
    assert total.fn == sum(o.counts.fn for o in outcomes)
    for fold in ("s00", "s01"):
        fold_dir = out / f"fold_{fold}"
        for name in ("checkpoint.ckpt", "proposals.jsonl",
                     "probabilities.jsonl", "report.json", "report.txt"):
            assert (fold_dir / name).is_file(), name
    assert (out / "report.json").is_file()
    assert (out / "report.txt").read_text().count("\n") == 4  # header + 2 + total
