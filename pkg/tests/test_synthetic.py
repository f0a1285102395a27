import numpy as np
import pytest

from exspot.errors import ConfigError, PackingError
from exspot.labels import MACRO, MICRO
from exspot.synthetic import (
    SynthSpec,
    class_anchors,
    envelope,
    foreground_share,
    generate,
    generate_video,
    linear_probe_accuracy,
    split_loso,
)

SMALL = SynthSpec(subjects=2, videos_per_subject=2, frame_count=(400, 450))


def test_spec_validation():
    SMALL.validate()
    with pytest.raises(ConfigError):
        SynthSpec(micro_frames=(16, 12)).validate()
    with pytest.raises(ConfigError):
        SynthSpec(micro_frames=(12, 16)).validate()  # 16 frames > 0.5 s at 30 fps
    with pytest.raises(ConfigError):
        SynthSpec(macro_frames=(10, 22)).validate()  # overlaps the micro band
    with pytest.raises(ConfigError):
        SynthSpec(macro_frames=(16, 200)).validate()  # beyond 4 s at 30 fps
    with pytest.raises(ConfigError):
        SynthSpec(subjects=0).validate()
    with pytest.raises(ConfigError):
        SynthSpec(snr=-1.0).validate()


def test_spec_dict_round_trip():
    d = SMALL.to_dict()
    assert SynthSpec.from_dict(d) == SMALL
    with pytest.raises(ConfigError):
        SynthSpec.from_dict({**d, "contrast": 2.0})


def test_generate_is_deterministic():
    a = generate(SMALL)
    b = generate(SMALL)
    assert [v.video_id for v in a] == [v.video_id for v in b]
    for va, vb in zip(a, b):
        np.testing.assert_array_equal(va.image, vb.image)
        np.testing.assert_array_equal(va.flow, vb.flow)
        assert va.gts == vb.gts


def test_video_content_independent_of_order():
    spec = SMALL
    anchors = class_anchors(spec)
    direct = generate_video(spec, 1, 1, anchors)
    from_batch = next(v for v in generate(spec) if v.video_id == "s01_v01")
    np.testing.assert_array_equal(direct.image, from_batch.image)
    assert direct.gts == from_batch.gts


def test_interval_durations_respect_class_bands():
    for video in generate(SMALL):
        for gt in video.gts:
            frames = gt.offset - gt.onset + 1
            seconds = frames / video.fps
            if gt.label == MICRO:
                assert SMALL.micro_frames[0] <= frames <= SMALL.micro_frames[1]
                assert seconds <= 0.5
            else:
                assert SMALL.macro_frames[0] <= frames <= SMALL.macro_frames[1]
                assert 0.5 < seconds <= 4.0


def test_intervals_disjoint_with_gap_and_margins():
    for video in generate(SMALL):
        gts = video.gts
        assert gts == sorted(gts, key=lambda g: g.onset)
        assert gts[0].onset >= SMALL.min_gap_frames
        assert gts[-1].offset <= video.frame_count - 1 - SMALL.min_gap_frames
        for a, b in zip(gts, gts[1:]):
            assert b.onset - a.offset - 1 >= SMALL.min_gap_frames


def test_interval_counts_per_video():
    for video in generate(SMALL):
        n_micro = sum(g.label == MICRO for g in video.gts)
        n_macro = sum(g.label == MACRO for g in video.gts)
        assert SMALL.micro_per_video[0] <= n_micro <= SMALL.micro_per_video[1]
        assert SMALL.macro_per_video[0] <= n_macro <= SMALL.macro_per_video[1]


def test_default_foreground_share_in_band():
    videos = generate(SynthSpec())
    assert 0.02 <= foreground_share(videos) <= 0.08


def test_packing_error_when_video_too_short():
    spec = SynthSpec(subjects=1, videos_per_subject=1, frame_count=(120, 120),
                     micro_per_video=(2, 2), macro_per_video=(3, 3))
    with pytest.raises(PackingError):
        generate(spec)


def test_envelope_shape():
    env = envelope(13)
    assert env.max() == 1.0
    assert np.argmax(env) == 6
    assert np.all(env > 0.0)
    np.testing.assert_allclose(env, env[::-1])
    even = envelope(8)
    assert even[3] == even[4] == even.max()
    assert np.all(even > 0.0)


def test_signal_lies_along_class_anchor():
    spec = SynthSpec(subjects=1, videos_per_subject=1, snr=50.0,
                     frame_count=(500, 500), direction_spread=0.0)
    anchors = class_anchors(spec)
    video = generate(spec)[0]
    gt = video.gts[0]
    apex = (gt.onset + gt.offset) // 2
    proj = video.image[apex] @ anchors[gt.label]
    assert proj > spec.snr * 0.5
    background = video.image[gt.offset + spec.min_gap_frames :][:50]
    assert np.abs(background @ anchors[gt.label]).mean() < 3.0


def test_flow_is_envelope_difference():
    spec = SynthSpec(subjects=1, videos_per_subject=1, snr=1000.0,
                     frame_count=(500, 500), direction_spread=0.0)
    video = generate(spec)[0]
    gt = video.gts[0]
    # rising half of the envelope: flow projects positively, falling: negatively
    anchors = class_anchors(spec)
    a = anchors[gt.label]
    rise = video.flow[gt.onset + 1] @ a
    fall = video.flow[gt.offset] @ a
    assert rise > 0 and fall < 0


def test_class_anchors_unit_and_distinct():
    anchors = class_anchors(SynthSpec())
    for v in anchors.values():
        assert np.linalg.norm(v) == pytest.approx(1.0)
    cos = float(anchors[MICRO] @ anchors[MACRO])
    assert 0.5 < cos < 0.999


def test_split_loso_folds():
    videos = generate(SMALL)
    folds = split_loso(videos)
    assert [f.held_out for f in folds] == ["s00", "s01"]
    all_ids = {v.video_id for v in videos}
    for fold in folds:
        assert set(fold.train_ids) | set(fold.test_ids) == all_ids
        assert not set(fold.train_ids) & set(fold.test_ids)
        assert all(vid.startswith(fold.held_out) for vid in fold.test_ids)


def test_split_loso_needs_two_subjects():
    videos = generate(SynthSpec(subjects=1, videos_per_subject=2,
                                frame_count=(400, 420)))
    with pytest.raises(ConfigError):
        split_loso(videos)


def test_probe_separates_default_dataset():
    videos = generate(SynthSpec())
    acc = linear_probe_accuracy(videos, snippet_len=8, overlap=6)
    assert acc > 0.95


def test_probe_near_chance_without_signal():
    videos = generate(SynthSpec(snr=0.0))
    acc = linear_probe_accuracy(videos, snippet_len=8, overlap=6)
    assert acc < 0.7
