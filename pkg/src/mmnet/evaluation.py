"""Detection metrics, motion-IoU speed buckets, throughput benchmark and the ablation grid."""

from __future__ import annotations

import csv
import io
import statistics
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from mmnet.data import Clip, gop_dataset
from mmnet.detector import (
    ABLATIONS,
    AblationConfig,
    DetectionBox,
    FULL,
    MMNetModel,
    TrainConfig,
    detect_frame,
    infer_gop,
    run_phase2,
)
from mmnet.errors import UsageError

BUCKETS = ("fast", "medium", "slow")
CSV_HEADER = (
    "config", "map", "map_fast", "map_medium", "map_slow", "fps_full", "fps_prop", "ratio",
    "miou", "miou_fast", "miou_medium", "miou_slow",
)


def iou(a, b) -> float:
    ay1, ax1, ay2, ax2 = a
    by1, bx1, by2, bx2 = b
    if ay2 <= ay1 or ax2 <= ax1 or by2 <= by1 or bx2 <= bx1:
        raise UsageError(f"degenerate box in iou: {a} / {b}")
    ih = min(ay2, by2) - max(ay1, by1)
    iw = min(ax2, bx2) - max(ax1, bx1)
    if ih <= 0 or iw <= 0:
        return 0.0
    inter = ih * iw
    return inter / ((ay2 - ay1) * (ax2 - ax1) + (by2 - by1) * (bx2 - bx1) - inter)


# ---------------------------------------------------------------- average precision


def match_detections(
    detections: Sequence[Sequence[DetectionBox]],
    truths: Sequence[Sequence[tuple[int, tuple]]],
    class_id: int,
    iou_threshold: float = 0.5,
    ignore: Sequence[Sequence[bool]] | None = None,
) -> tuple[list[bool], int]:
    """Greedy matching in descending score order.

    Returns the TP flag of every counted detection (in rank order) and the
    number of non-ignored truths. A detection whose best truth is already
    taken is a false positive; one whose best truth is ignored is dropped.
    """
    ranked = sorted(
        ((d.score, f, k) for f, frame in enumerate(detections) for k, d in enumerate(frame) if d.class_id == class_id),
        key=lambda item: (-item[0], item[1], item[2]),
    )
    gt = [[(j, box) for j, (c, box) in enumerate(frame) if c == class_id] for frame in truths]
    n_truth = sum(
        1 for f, frame in enumerate(gt) for j, _ in frame if not (ignore is not None and ignore[f][j])
    )
    taken: set[tuple[int, int]] = set()
    flags = []
    for _, f, k in ranked:
        best, best_j = 0.0, -1
        for j, box in gt[f] if f < len(gt) else []:
            v = iou(detections[f][k].box, box)
            if v > best:
                best, best_j = v, j
        if best >= iou_threshold:
            if ignore is not None and ignore[f][best_j]:
                continue
            if (f, best_j) in taken:
                flags.append(False)
            else:
                taken.add((f, best_j))
                flags.append(True)
        else:
            flags.append(False)
    return flags, n_truth


def ap_from_flags(flags: Sequence[bool], n_truth: int) -> float:
    """All-points interpolated area under the precision/recall curve."""
    if n_truth == 0:
        raise UsageError("average precision undefined without truths")
    if not flags:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=float))
    fp = np.cumsum(1.0 - np.asarray(flags, dtype=float))
    recall = tp / n_truth
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def average_precision(detections, truths, class_id: int = 0, iou_threshold: float = 0.5, ignore=None) -> float:
    flags, n_truth = match_detections(detections, truths, class_id, iou_threshold, ignore)
    return ap_from_flags(flags, n_truth)


def mean_average_precision(detections, truths, n_classes: int, iou_threshold: float = 0.5,
                           ignore=None) -> tuple[float, dict[int, float]]:
    """Mean over classes that have at least one counted truth; NaN when none do."""
    per_class = {}
    for c in range(n_classes):
        flags, n_truth = match_detections(detections, truths, c, iou_threshold, ignore)
        if n_truth:
            per_class[c] = ap_from_flags(flags, n_truth)
    value = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return value, per_class


# ---------------------------------------------------------------- motion speed buckets


def motion_iou_bucket(value: float) -> str:
    if value < 0.7:
        return "fast"
    if value > 0.9:
        return "slow"
    return "medium"


def motion_speed_split(tracks: dict[int, Sequence[tuple[int, tuple]]], window: int = 10) -> dict[tuple[int, int], tuple[float, str]]:
    """Per ``(object_id, frame)``: mean IoU with the same object within ``±window`` frames, and its bucket."""
    out = {}
    for obj, track in tracks.items():
        boxes = dict(track)
        for t, box in track:
            near = [boxes[u] for u in range(t - window, t + window + 1) if u != t and u in boxes]
            value = float(np.mean([iou(box, b) for b in near])) if near else 1.0
            out[(obj, t)] = (value, motion_iou_bucket(value))
    return out


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    config: str
    map: float
    map_fast: float
    map_medium: float
    map_slow: float
    per_class_ap: dict[int, float] = field(default_factory=dict)
    fps_full: float = float("nan")
    fps_prop: float = float("nan")
    ratio: float = float("nan")
    miou: float = float("nan")
    miou_fast: float = float("nan")
    miou_medium: float = float("nan")
    miou_slow: float = float("nan")
    bucket_counts: dict[str, int] = field(default_factory=dict)

    def row(self) -> list:
        return [getattr(self, k) for k in CSV_HEADER]


def _best_ious(dets: Sequence[DetectionBox], truths: Sequence[tuple[int, tuple]]) -> list[float]:
    return [max((iou(d.box, box) for d in dets), default=0.0) for _, box in truths]


def run_detector(model: MMNetModel, clips: Sequence[Clip], flags: AblationConfig = FULL, mode: str = "gop",
                 score_threshold: float = 0.5, nms_iou: float = 0.5) -> list[list[list[DetectionBox]]]:
    """Detections per clip per frame. ``mode`` is ``gop`` (propagation) or ``frame`` (I-path everywhere)."""
    out = []
    for clip in clips:
        if mode == "gop":
            dets = [d for g in clip.gops for d in infer_gop(g, model, flags, score_threshold, nms_iou)]
        elif mode == "frame":
            dets = [detect_frame(f, model, flags, score_threshold, nms_iou) for f in clip.frames]
        else:
            raise UsageError(f"unknown detection mode {mode!r}")
        out.append(dets)
    return out


def evaluate_detections(name: str, detections: Sequence[Sequence[Sequence[DetectionBox]]], clips: Sequence[Clip],
                        n_classes: int = 3, window: int = 10) -> EvalReport:
    flat_dets, flat_truth, buckets = [], [], []
    for clip, dets in zip(clips, detections):
        split = motion_speed_split(clip.truth.tracks(), window)
        for t, boxes in enumerate(clip.truth.frames):
            flat_dets.append(dets[t])
            flat_truth.append([(tb.class_id, tb.box) for tb in boxes])
            buckets.append([split[(tb.object_id, t)][1] for tb in boxes])
    overall, per_class = mean_average_precision(flat_dets, flat_truth, n_classes)
    report = EvalReport(name, overall, float("nan"), float("nan"), float("nan"), per_class)
    ious = [_best_ious(d, t) for d, t in zip(flat_dets, flat_truth)]
    all_ious = [v for frame in ious for v in frame]
    report.miou = float(np.mean(all_ious)) if all_ious else float("nan")
    for bucket in BUCKETS:
        ignore = [[b != bucket for b in frame] for frame in buckets]
        value, _ = mean_average_precision(flat_dets, flat_truth, n_classes, ignore=ignore)
        setattr(report, f"map_{bucket}", value)
        selected = [v for frame_i, frame_b in zip(ious, buckets) for v, b in zip(frame_i, frame_b) if b == bucket]
        setattr(report, f"miou_{bucket}", float(np.mean(selected)) if selected else float("nan"))
        report.bucket_counts[bucket] = len(selected)
    return report


def evaluate(model: MMNetModel, clips: Sequence[Clip], flags: AblationConfig = FULL, mode: str = "gop",
             score_threshold: float = 0.5, nms_iou: float = 0.5, name: str | None = None) -> EvalReport:
    dets = run_detector(model, clips, flags, mode, score_threshold, nms_iou)
    return evaluate_detections(name or flags.name, dets, clips, model.config.n_classes)


# ---------------------------------------------------------------- throughput


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=1)


def bench_throughput(model: MMNetModel, clips: Sequence[Clip], repetitions: int = 5,
                     flags: AblationConfig = FULL, warmup: int = 1) -> tuple[float, float, float]:
    """Median frames/second of per-frame full extraction vs GOP propagation.

    Both paths start from already-decoded inputs; the propagation path
    includes motion/residual rescaling.
    """
    frames = [f for c in clips for f in c.frames]
    gops = [g for c in clips for g in c.gops]
    if not frames:
        raise UsageError("benchmark needs at least one frame")

    def full_pass():
        for f in frames:
            detect_frame(f, model, flags)

    def prop_pass():
        for g in gops:
            infer_gop(g, model, flags)

    def timed(fn: Callable[[], None]) -> float:
        start = time.perf_counter()
        fn()
        return len(frames) / (time.perf_counter() - start)

    with _single_thread():
        for _ in range(warmup):
            full_pass()
            prop_pass()
        fps_full, fps_prop = [], []
        for _ in range(repetitions):
            fps_full.append(timed(full_pass))
            fps_prop.append(timed(prop_pass))
    full, prop = statistics.median(fps_full), statistics.median(fps_prop)
    return full, prop, prop / full


# ---------------------------------------------------------------- ablation


def parse_configs(spec: str) -> list[AblationConfig]:
    out = []
    for key in (k.strip().lower() for k in spec.split(",") if k.strip()):
        if key not in ABLATIONS:
            raise UsageError(f"unknown ablation config {key!r}; choose from {','.join(ABLATIONS)}")
        out.append(ABLATIONS[key])
    if not out:
        raise UsageError("no ablation configs given")
    return out


def run_ablation(train_clips: Sequence[Clip], test_clips: Sequence[Clip], base: MMNetModel,
                 configs: Sequence[AblationConfig], train: TrainConfig, seed: int,
                 bench_repetitions: int = 3, bench_clips: Sequence[Clip] | None = None,
                 log=None) -> list[EvalReport]:
    """Phase-2 train every config from ``base`` and evaluate it on ``test_clips``."""
    samples = gop_dataset(train_clips)
    reports = []
    for flags in configs:
        model = run_phase2(samples, base, train, seed, flags, log=log)
        report = evaluate(model, test_clips, flags)
        if bench_repetitions > 0:
            report.fps_full, report.fps_prop, report.ratio = bench_throughput(
                model, bench_clips or test_clips, bench_repetitions, flags
            )
        reports.append(report)
        if log is not None:
            log(format_table([report]))
    return reports


def _fmt(value) -> str:
    return f"{value:.4f}" if isinstance(value, float) else str(value)


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in reports:
        writer.writerow([_fmt(v) for v in r.row()])
    return buf.getvalue()


def format_table(reports: Sequence[EvalReport]) -> str:
    widths = [max(len(h), 8) for h in CSV_HEADER]
    lines = ["  ".join(h.rjust(w) for h, w in zip(CSV_HEADER, widths))]
    for r in reports:
        lines.append("  ".join(_fmt(v).rjust(w) for v, w in zip(r.row(), widths)))
    return "\n".join(lines)
