import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmnet.data import make_clips
from mmnet.detector import ABLATIONS, DetectionBox, ExtractorConfig, ModelConfig, TrainConfig, init_model
from mmnet.errors import UsageError
from mmnet.evaluation import (
    BUCKETS,
    CSV_HEADER,
    EvalReport,
    average_precision,
    bench_throughput,
    evaluate,
    format_table,
    iou,
    match_detections,
    mean_average_precision,
    motion_iou_bucket,
    motion_speed_split,
    parse_configs,
    reports_to_csv,
    run_ablation,
)
from mmnet.synth import SceneConfig
from oracles import ap_enumerate, box_iou, greedy_match_bruteforce, motion_iou_bruteforce


def det(score, box, cls=0):
    return DetectionBox(cls, score, tuple(float(v) for v in box))


# ---------------------------------------------------------------- iou


def test_iou_examples():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iou((0, 0, 10, 10), (0, 5, 10, 15)) == pytest.approx(1 / 3, abs=1e-15)
    assert iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0
    assert iou((0, 0, 10, 10), (10, 0, 20, 10)) == 0.0


def test_degenerate_box_is_usage_error():
    with pytest.raises(UsageError):
        iou((0, 0, 0, 10), (0, 0, 10, 10))
    with pytest.raises(UsageError):
        iou((0, 0, 10, 10), (5, 5, 5, 2))


box_st = st.tuples(st.integers(0, 40), st.integers(0, 40), st.integers(1, 20), st.integers(1, 20)).map(
    lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3])
)


@settings(max_examples=100, deadline=None)
@given(box_st, box_st)
def test_iou_matches_oracle_and_is_symmetric(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(box_iou(a, b), abs=1e-15)
    assert v == pytest.approx(iou(b, a), abs=1e-15)


# ---------------------------------------------------------------- average precision


TRUTHS = [[(0, (0, 0, 10, 10)), (0, (20, 20, 30, 30))]]


def test_perfect_and_empty_detections():
    perfect = [[det(0.9, (0, 0, 10, 10)), det(0.8, (20, 20, 30, 30))]]
    assert average_precision(perfect, TRUTHS) == 1.0
    assert average_precision([[]], TRUTHS) == 0.0


def test_hand_evaluated_pr_curve():
    dets = [[det(0.9, (0, 0, 10, 10)), det(0.8, (40, 40, 50, 50)), det(0.7, (20, 20, 30, 30))]]
    expected = ap_enumerate([(0.9, True), (0.8, False), (0.7, True)], 2)
    # PR points (0.5, 1), (0.5, 0.5), (1, 2/3): 0.5 * 1 + 0.5 * 2/3
    assert expected == pytest.approx(5 / 6, abs=1e-15)
    assert average_precision(dets, TRUTHS) == pytest.approx(expected, abs=1e-12)


def test_classes_without_truth_are_skipped():
    dets = [[det(0.9, (0, 0, 10, 10)), det(0.5, (0, 0, 10, 10), cls=2)]]
    value, per_class = mean_average_precision(dets, TRUTHS, 3)
    # one of the two class-0 truths found, nothing for classes 1 and 2
    assert value == 0.5 and set(per_class) == {0}
    value, per_class = mean_average_precision([[]], [[]], 3)
    assert math.isnan(value) and per_class == {}


def test_ignored_truth_drops_its_detection():
    dets = [[det(0.9, (0, 0, 10, 10)), det(0.8, (20, 20, 30, 30))]]
    flags, n = match_detections(dets, TRUTHS, 0, ignore=[[True, False]])
    assert flags == [True] and n == 1


random_frame = st.lists(
    st.tuples(st.floats(0.01, 1.0), st.tuples(st.integers(0, 20), st.integers(0, 20)).map(
        lambda t: (t[0], t[1], t[0] + 10, t[1] + 10))),
    min_size=0, max_size=5,
)
truth_frame = st.lists(
    st.tuples(st.integers(0, 20), st.integers(0, 20)).map(lambda t: (t[0], t[1], t[0] + 10, t[1] + 10)),
    min_size=1, max_size=5,
)


@settings(max_examples=150, deadline=None)
@given(random_frame, truth_frame, st.sampled_from(["square", "affine", "log"]))
def test_ap_invariant_under_monotone_rescaling(dets, truths, kind):
    f = {"square": lambda s: s * s, "affine": lambda s: 3 * s + 1, "log": lambda s: math.log(s)}[kind]
    truth = [[(0, b) for b in truths]]
    base = average_precision([[det(s, b) for s, b in dets]], truth)
    rescaled = average_precision([[det(f(s), b) for s, b in dets]], truth)
    assert rescaled == pytest.approx(base, abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(random_frame, truth_frame)
def test_matching_agrees_with_bruteforce(dets, truths):
    # distinct scores so the rank order is unambiguous
    dets = [(s + 1e-6 * k, b) for k, (s, b) in enumerate(dets)]
    flags, n = match_detections([[det(s, b) for s, b in dets]], [[(0, b) for b in truths]], 0)
    assert n == len(truths)
    assert flags == greedy_match_bruteforce(dets, truths)
    expected = ap_enumerate(list(zip([s for s, _ in dets], sorted_hits(dets, truths))), len(truths)) if dets else 0.0
    assert average_precision([[det(s, b) for s, b in dets]], [[(0, b) for b in truths]]) == pytest.approx(expected, abs=1e-12)


def sorted_hits(dets, truths):
    """Hits re-indexed to the original detection order (ap_enumerate sorts by score itself)."""
    order = sorted(range(len(dets)), key=lambda k: -dets[k][0])
    hits = greedy_match_bruteforce(dets, truths)
    out = [False] * len(dets)
    for rank, k in enumerate(order):
        out[k] = hits[rank]
    return out


@settings(max_examples=150, deadline=None)
@given(random_frame, truth_frame)
def test_low_ranked_duplicates_leave_ap_unchanged(dets, truths):
    """Duplicates scored below every original only add false positives past the last recall step."""
    truth = [[(0, b) for b in truths]]
    original = [det(s, b) for s, b in dets]
    dups = [det(s * 1e-3, b) for s, b in dets]
    flags, _ = match_detections([original + dups], truth, 0)
    assert not any(flags[len(original):])
    assert average_precision([original + dups], truth) == pytest.approx(average_precision([original], truth), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(random_frame, truth_frame)
def test_duplicates_never_raise_ap(dets, truths):
    truth = [[(0, b) for b in truths]]
    original = [det(s, b) for s, b in dets]
    doubled = original + [det(s, b) for s, b in dets]
    assert average_precision([doubled], truth) <= average_precision([original], truth) + 1e-12


# ---------------------------------------------------------------- speed buckets


def test_bucket_edges():
    assert motion_iou_bucket(0.69) == "fast"
    assert motion_iou_bucket(0.7) == "medium" and motion_iou_bucket(0.9) == "medium"
    assert motion_iou_bucket(0.91) == "slow"


def test_static_and_full_width_motion():
    static = {0: [(t, (5, 5, 15, 15)) for t in range(30)]}
    assert all(v == (1.0, "slow") for v in motion_speed_split(static).values())
    jumping = {0: [(t, (0, 10 * t, 10, 10 * t + 10)) for t in range(30)]}
    assert all(v == (0.0, "fast") for v in motion_speed_split(jumping).values())


def test_single_frame_track_is_slow():
    assert motion_speed_split({3: [(4, (0, 0, 5, 5))]}) == {(3, 4): (1.0, "slow")}


def test_twenty_pixel_box_two_px_per_frame():
    track = [(t, (0, 2 * t, 20, 2 * t + 20)) for t in range(30)]
    split = motion_speed_split({0: track})
    boxes = dict(track)
    for t in range(30):
        want = motion_iou_bruteforce(boxes, t, 10)
        assert split[(0, t)][0] == pytest.approx(want, abs=1e-12)
        assert split[(0, t)][1] == motion_iou_bucket(want)
    # mid-track every offset 1..10 is present on both sides
    assert split[(0, 15)][0] == pytest.approx(np.mean([(20 - 2 * k) / (20 + 2 * k) for k in range(1, 11)]), abs=1e-12)
    assert split[(0, 15)][1] == "fast"


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_buckets_partition_truth(seed):
    clip = make_clips(SceneConfig(height=48, width=48, n_frames=15, size_range=(10, 20), speed_range=(0, 8)), 1,
                      seed, search_range=0)[0]
    split = motion_speed_split(clip.truth.tracks())
    instances = {(tb.object_id, t) for t, boxes in enumerate(clip.truth.frames) for tb in boxes}
    assert set(split) == instances
    assert all(b in BUCKETS for _, b in split.values())


# ---------------------------------------------------------------- reports / benchmark / ablation


SMALL = ModelConfig(extractor=ExtractorConfig((4, 8, 8), convs_per_stage=1))


def test_evaluate_report_values_in_range():
    clips = make_clips(SceneConfig(n_frames=6), 2, 1)
    model = init_model(SMALL, 0)
    for mode in ("gop", "frame"):
        report = evaluate(model, clips, mode=mode, score_threshold=0.0)
        for v in (report.map, report.miou, *report.per_class_ap.values()):
            assert 0.0 <= v <= 1.0
        assert sum(report.bucket_counts.values()) == sum(len(b) for c in clips for b in c.truth.frames)
    with pytest.raises(UsageError):
        evaluate(model, clips, mode="bogus")


def test_csv_and_table_schema():
    r = EvalReport("e", 0.5, 0.25, 0.5, 0.75, fps_full=10.0, fps_prop=30.0, ratio=3.0)
    text = reports_to_csv([r, r])
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_HEADER
    assert CSV_HEADER[:8] == ("config", "map", "map_fast", "map_medium", "map_slow", "fps_full", "fps_prop", "ratio")
    assert rows[1][:8] == ["e", "0.5000", "0.2500", "0.5000", "0.7500", "10.0000", "30.0000", "3.0000"]
    assert len(format_table([r]).splitlines()) == 2


def test_parse_configs():
    assert [c.name for c in parse_configs("a, F")] == ["a", "f"]
    with pytest.raises(UsageError):
        parse_configs("a,z")
    with pytest.raises(UsageError):
        parse_configs(" , ")


def test_throughput_ratio_near_one_without_p_frames():
    model = init_model(ModelConfig(extractor=ExtractorConfig((16, 32, 64), convs_per_stage=2)), 0)
    clips = make_clips(SceneConfig(n_frames=25), 4, 2, gop_len=1)
    full, prop, ratio = bench_throughput(model, clips, repetitions=5)
    assert full > 0 and prop > 0
    assert 0.9 <= ratio <= 1.1


def test_deeper_extractor_increases_ratio():
    clips = make_clips(SceneConfig(n_frames=25), 4, 3, gop_len=12)
    ratios = []
    for depth in (2, 4):
        model = init_model(ModelConfig(extractor=ExtractorConfig((16, 32, 64), convs_per_stage=depth)), 0)
        ratios.append(bench_throughput(model, clips, repetitions=3)[2])
    assert ratios[1] > ratios[0]


def test_ablation_smoke():
    train = make_clips(SceneConfig(n_frames=12), 1, 4)
    test = make_clips(SceneConfig(n_frames=12), 1, 5)
    reports = run_ablation(train, test, init_model(SMALL, 0), parse_configs("a,b,c,d,e,f"),
                           TrainConfig(phase2_epochs=1), seed=0, bench_repetitions=1)
    assert [r.config for r in reports] == list(ABLATIONS)
    for r in reports:
        assert math.isfinite(r.map) and math.isfinite(r.ratio)
