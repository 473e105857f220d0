"""``mmnet`` command line: generate, encode, train, infer, evaluate, benchmark, ablate, visualize.

Exit codes: 0 ok, 1 usage/configuration, 2 data or parse failure, 3 numeric failure.
``MMNET_THREADS`` caps the BLAS/OpenMP worker count.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import Sequence

import numpy as np

from mmnet.codec import block_match_encode, export_sidecar
from mmnet.config import EXPERIMENTS, REFERENCE, ExperimentConfig
from mmnet.data import Clip, frame_dataset, gop_dataset, load_clip, load_dataset, load_model, make_clips, save_model
from mmnet.detector import ABLATIONS, DetectionBox, MMNetModel, gop_features, init_model, run_phase1, run_phase2
from mmnet.errors import MMNetError, ParseError, UsageError
from mmnet.evaluation import (
    bench_throughput,
    evaluate,
    format_table,
    parse_configs,
    reports_to_csv,
    run_ablation,
    run_detector,
)
from mmnet.synth import format_truth, generate_synthetic_video
from mmnet.viz import read_frame, viz_memory, viz_motion_field, write_frame


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _log(msg: str) -> None:
    print(msg, flush=True)


def _resolved(args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("config: " + json.dumps(cfg, sort_keys=True, default=str), flush=True)


def _experiment(args) -> ExperimentConfig:
    return EXPERIMENTS[args.preset]


def _scene(args):
    base = _experiment(args).scene
    return dataclasses.replace(
        base,
        height=args.height or base.height,
        width=args.width or base.width,
        n_frames=args.frames or base.n_frames,
        n_objects=args.objects if args.objects is not None else base.n_objects,
        speed_range=(
            args.speed_min if args.speed_min is not None else base.speed_range[0],
            args.speed_max if args.speed_max is not None else base.speed_range[1],
        ),
    )


def _clip_sets(args, exp: ExperimentConfig) -> tuple[list[Clip], list[Clip]]:
    if args.train_data:
        train = load_dataset(args.train_data)
    else:
        train = make_clips(exp.scene, exp.train_clips, args.seed, exp.gop_len, exp.search_range, "train")
    if args.test_data:
        test = load_dataset(args.test_data)
    else:
        test = make_clips(exp.scene, exp.test_clips, exp.test_seed, exp.gop_len, exp.search_range, "test")
    return train, test


def _format_detections(per_frame: Sequence[Sequence[DetectionBox]]) -> str:
    lines = ["# frame_idx class score y1 x1 y2 x2"]
    for t, dets in enumerate(per_frame):
        for d in dets:
            y1, x1, y2, x2 = d.box
            lines.append(f"{t} {d.class_id} {d.score:.6f} {y1:.3f} {x1:.3f} {y2:.3f} {x2:.3f}")
    return "\n".join(lines) + "\n"


def _flags(args):
    flags = ABLATIONS[args.config]
    if getattr(args, "no_mv", False):
        flags = dataclasses.replace(flags, use_mv=False, name=flags.name + "-nomv")
    return flags


# ---------------------------------------------------------------- subcommands


def cmd_gen(args) -> int:
    scene = _scene(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.clips):
        name = f"clip_{k:03d}"
        frames, truth = generate_synthetic_video(scene, args.seed * 1000 + k)
        clip_dir = out / name
        clip_dir.mkdir(exist_ok=True)
        for t, frame in enumerate(frames):
            write_frame(clip_dir / f"frame_{t:04d}.ppm", frame)
        (out / f"{name}.txt").write_text(format_truth(truth))
    _log(f"wrote {args.clips} clips to {out}")
    return 0


def _ppm_frames(directory: Path) -> list[np.ndarray]:
    return [read_frame(p) for p in sorted(directory.glob("*.ppm"))]


def cmd_encode(args) -> int:
    src = Path(args.input or args.path or "")
    if not (args.input or args.path):
        raise UsageError("encode needs an input directory (positional or --input)")
    if not src.is_dir():
        raise UsageError(f"{src}: not a directory")
    if any(src.glob("*.ppm")):
        jobs = [(src, Path(args.out) if args.out else src.with_suffix(".mmgp"))]
    else:
        out_dir = Path(args.out) if args.out else src
        jobs = [(d, out_dir / f"{d.name}.mmgp") for d in sorted(p for p in src.iterdir() if p.is_dir())
                if any(d.glob("*.ppm"))]
        if not jobs:
            raise UsageError(f"{src}: no .ppm frames and no clip subdirectories with frames")
        out_dir.mkdir(parents=True, exist_ok=True)
    for frame_dir, target in jobs:
        gops = block_match_encode(_ppm_frames(frame_dir), args.gop, args.range)
        target.write_bytes(export_sidecar(gops))
        _log(f"{frame_dir} -> {target} ({len(gops)} GOPs)")
    return 0


def cmd_train(args) -> int:
    exp = _experiment(args)
    if args.train_data:
        train = load_dataset(args.train_data)
    else:
        train = make_clips(exp.scene, exp.train_clips, args.seed, exp.gop_len, exp.search_range, "train")
    model = load_model(args.init) if args.init else init_model(exp.model, args.seed)
    if args.phase1_epochs > 0:
        model = run_phase1(frame_dataset(train), model, exp.train, args.seed, args.phase1_epochs, log=_log)
    if args.phase2_epochs > 0:
        model = run_phase2(gop_dataset(train), model, exp.train, args.seed, ABLATIONS[args.config],
                           args.phase2_epochs, log=_log)
    save_model(args.out, model)
    _log(f"saved {args.out}")
    return 0


def _model(args, exp: ExperimentConfig) -> MMNetModel:
    return load_model(args.ckpt) if args.ckpt else init_model(exp.model, args.seed)


def cmd_infer(args) -> int:
    model = load_model(args.ckpt)
    clip = load_clip(args.clip)
    flags = _flags(args)
    dets = run_detector(model, [clip], flags, "gop", args.threshold, args.nms)[0]
    text = _format_detections(dets)
    if args.out:
        Path(args.out).write_text(text)
        _log(f"wrote {sum(len(d) for d in dets)} detections for {len(dets)} frames to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.ckpt)
    clips = load_dataset(args.data)
    report = evaluate(model, clips, _flags(args), args.mode, args.threshold, args.nms)
    _log(format_table([report]))
    _log(f"per-class AP: {json.dumps({str(k): round(v, 6) for k, v in report.per_class_ap.items()})}")
    _log(f"bucket counts: {json.dumps(report.bucket_counts, sort_keys=True)}")
    if args.csv:
        Path(args.csv).write_text(reports_to_csv([report]))
    return 0


def cmd_bench(args) -> int:
    exp = _experiment(args)
    model = _model(args, exp)
    if args.data:
        clips = load_dataset(args.data)
    else:
        scene = dataclasses.replace(exp.scene, n_frames=args.frames or 60)
        clips = make_clips(scene, 2, args.seed, args.gop, exp.search_range, "bench")
    n_frames = sum(len(c.frames) for c in clips)
    if n_frames < 100:
        _log(f"warning: only {n_frames} frames; timings are noisy below 100")
    full, prop, ratio = bench_throughput(model, clips, args.reps, ABLATIONS[args.config])
    _log(f"frames {n_frames} gop {args.gop} reps {args.reps}")
    _log(f"fps_full {full:.2f}\nfps_prop {prop:.2f}\nratio {ratio:.3f}")
    return 0


def cmd_ablate(args) -> int:
    exp = _experiment(args)
    configs = parse_configs(args.configs)
    train, test = _clip_sets(args, exp)
    if args.ckpt:
        base = load_model(args.ckpt)
    else:
        base = run_phase1(frame_dataset(train), init_model(exp.model, args.seed), exp.train, args.seed,
                          args.phase1_epochs, log=_log)
    train_cfg = dataclasses.replace(exp.train, phase2_epochs=args.phase2_epochs)
    reports = run_ablation(train, test, base, configs, train_cfg, args.seed, args.bench_reps, log=None)
    _log(format_table(reports))
    csv_text = reports_to_csv(reports)
    if args.out:
        Path(args.out).write_text(csv_text)
    else:
        sys.stdout.write(csv_text)
    return 0


def _frame_in_clip(clip: Clip, frame: int) -> tuple[int, int]:
    """Global frame index → (gop index, position inside the GOP)."""
    if not 0 <= frame < len(clip.frames):
        raise UsageError(f"frame {frame} outside clip of {len(clip.frames)} frames")
    for g, start in enumerate(clip.gop_starts):
        if frame < start + len(clip.gops[g]):
            return g, frame - start
    raise UsageError(f"frame {frame} not found")  # pragma: no cover


def cmd_viz_motion(args) -> int:
    clip = load_clip(args.clip)
    g, k = _frame_in_clip(clip, args.frame)
    if k == 0:
        raise UsageError(f"frame {args.frame} is an I-frame and carries no motion")
    pframe = clip.gops[g].pframes[k - 1]
    viz_motion_field(pframe.mvs, args.out, block=pframe.block_size)
    _log(f"wrote {args.out}")
    return 0


def cmd_viz_memory(args) -> int:
    model = load_model(args.ckpt)
    clip = load_clip(args.clip)
    g, k = _frame_in_clip(clip, args.frame)
    feats = gop_features(clip.gops[g], model, _flags(args))
    viz_memory(feats[k], args.out, clip.gops[g].shape)
    _log(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------- parser


def _add_scene(p) -> None:
    p.add_argument("--frames", type=int, default=None, help="frames per clip (preset value when omitted)")
    p.add_argument("--height", type=int, default=None, help="frame height (preset value when omitted)")
    p.add_argument("--width", type=int, default=None, help="frame width (preset value when omitted)")
    p.add_argument("--objects", type=int, default=None, help="objects per clip (preset value when omitted)")
    p.add_argument("--speed-min", type=float, default=None, help="min object speed px/frame (preset when omitted)")
    p.add_argument("--speed-max", type=float, default=None, help="max object speed px/frame (preset when omitted)")


def _add_common(p, seed: bool = True) -> None:
    p.add_argument("--preset", choices=sorted(EXPERIMENTS), default=REFERENCE.name, help="pinned experiment")
    if seed:
        p.add_argument("--seed", type=int, default=REFERENCE.seed, help="random seed")


def _add_detect(p) -> None:
    p.add_argument("--config", choices=sorted(ABLATIONS), default="f", help="ablation config (a-f)")
    p.add_argument("--threshold", type=float, default=0.5, help="objectness score threshold")
    p.add_argument("--nms", type=float, default=0.5, help="NMS IoU threshold")


def _add_datasets(p) -> None:
    p.add_argument("--train-data", default=None, help="training dataset dir (generated from the preset when omitted)")
    p.add_argument("--test-data", default=None, help="test dataset dir (generated from the preset when omitted)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="mmnet", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate synthetic PPM clips and truth files", formatter_class=fmt)
    _add_common(p)
    p.add_argument("--clips", type=int, default=20, help="number of clips")
    p.add_argument("--out", required=True, help="output directory")
    _add_scene(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("encode", help="block-matching encode PPM frames into .mmgp sidecars", formatter_class=fmt)
    p.add_argument("path", nargs="?", default=None, help="frame directory, or a directory of clip subdirectories")
    p.add_argument("--input", default=None, help="same as the positional path")
    p.add_argument("--gop", type=int, default=12, help="GOP length (I-frame + P-frames)")
    p.add_argument("--range", type=int, default=8, help="motion search range in pixels")
    p.add_argument("--out", default=None, help="output .mmgp (single clip) or directory")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="two-phase training, writes a checkpoint", formatter_class=fmt)
    _add_common(p)
    p.add_argument("--train-data", default=None, help="training dataset dir (generated from the preset when omitted)")
    p.add_argument("--init", default=None, help="start from this checkpoint instead of a fresh model")
    p.add_argument("--phase1-epochs", type=int, default=REFERENCE.train.phase1_epochs, help="single-frame epochs")
    p.add_argument("--phase2-epochs", type=int, default=REFERENCE.train.phase2_epochs, help="GOP epochs")
    p.add_argument("--config", choices=sorted(ABLATIONS), default="f", help="ablation config for phase 2")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="detect objects in every frame of a .mmgp clip", formatter_class=fmt)
    p.add_argument("clip", help=".mmgp clip")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--out", default=None, help="detections text file (stdout when omitted)")
    p.add_argument("--no-mv", action="store_true", help="propagate memory without motion warping")
    _add_detect(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="mAP / mean IoU with motion-speed buckets", formatter_class=fmt)
    p.add_argument("data", help="dataset directory (.mmgp + .txt)")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--mode", choices=("gop", "frame"), default="gop", help="propagation or per-frame detection")
    p.add_argument("--csv", default=None, help="also write the report as CSV")
    p.add_argument("--no-mv", action="store_true", help="propagate memory without motion warping")
    _add_detect(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="full-extraction vs propagation throughput", formatter_class=fmt)
    _add_common(p)
    p.add_argument("--ckpt", default=None, help="model checkpoint (fresh preset model when omitted)")
    p.add_argument("--data", default=None, help="dataset directory (two generated clips when omitted)")
    p.add_argument("--frames", type=int, default=60, help="frames per generated clip")
    p.add_argument("--gop", type=int, default=12, help="GOP length for generated clips")
    p.add_argument("--reps", type=int, default=5, help="timed repetitions (median reported)")
    p.add_argument("--config", choices=sorted(ABLATIONS), default="f", help="ablation config")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="phase-2 train and evaluate ablation configs", formatter_class=fmt)
    _add_common(p)
    _add_datasets(p)
    p.add_argument("--configs", default="a,b,c,d,e,f", help="comma-separated ablation configs")
    p.add_argument("--ckpt", default=None, help="phase-1 base checkpoint (trained here when omitted)")
    p.add_argument("--phase1-epochs", type=int, default=REFERENCE.train.phase1_epochs, help="base training epochs")
    p.add_argument("--phase2-epochs", type=int, default=REFERENCE.train.phase2_epochs, help="per-config GOP epochs")
    p.add_argument("--bench-reps", type=int, default=3, help="throughput repetitions per config (0 skips timing)")
    p.add_argument("--out", default=None, help="CSV path (stdout when omitted)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("viz-motion", help="colour-wheel image of one P-frame's motion vectors", formatter_class=fmt)
    p.add_argument("clip", help=".mmgp clip")
    p.add_argument("--frame", type=int, default=1, help="global frame index (must be a P-frame)")
    p.add_argument("--out", required=True, help="output .ppm")
    p.set_defaults(func=cmd_viz_motion)

    p = sub.add_parser("viz-memory", help="heatmap of the propagated memory at one frame", formatter_class=fmt)
    p.add_argument("clip", help=".mmgp clip")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--frame", type=int, default=1, help="global frame index")
    p.add_argument("--config", choices=sorted(ABLATIONS), default="f", help="ablation config")
    p.add_argument("--no-mv", action="store_true", help="mis-aligned memory: skip motion warping")
    p.add_argument("--out", required=True, help="output .pgm")
    p.set_defaults(func=cmd_viz_memory)
    return parser


def _thread_limit():
    value = os.environ.get("MMNET_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"MMNET_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise UsageError(f"MMNET_THREADS must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _resolved(args)
        with _thread_limit():
            return args.func(args)
    except MMNetError as exc:
        print(f"mmnet: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"mmnet: error: {exc.filename}: file not found", file=sys.stderr)
        return ParseError.exit_code
    except OSError as exc:
        print(f"mmnet: error: {exc}", file=sys.stderr)
        return ParseError.exit_code


if __name__ == "__main__":
    sys.exit(main())
