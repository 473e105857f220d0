"""Ablation grid (configs a-f) on a pinned experiment; writes a CSV report.

    python3 scripts/run_ablation.py fast_motion --out fast_ablation.csv
"""

from __future__ import annotations

import argparse

from mmnet.config import EXPERIMENTS
from mmnet.data import frame_dataset, load_model, make_clips
from mmnet.detector import init_model, run_phase1
from mmnet.evaluation import format_table, parse_configs, reports_to_csv, run_ablation


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("preset", choices=sorted(EXPERIMENTS))
    parser.add_argument("--configs", default="a,b,c,d,e,f")
    parser.add_argument("--ckpt", default=None, help="phase-1 checkpoint (trained here when omitted)")
    parser.add_argument("--bench-reps", type=int, default=3)
    parser.add_argument("--out", default=None, help="CSV path")
    args = parser.parse_args()

    exp = EXPERIMENTS[args.preset]
    train = make_clips(exp.scene, exp.train_clips, exp.seed, exp.gop_len, exp.search_range, "train")
    test = make_clips(exp.scene, exp.test_clips, exp.test_seed, exp.gop_len, exp.search_range, "test")
    if args.ckpt:
        base = load_model(args.ckpt)
    else:
        base = run_phase1(frame_dataset(train), init_model(exp.model, exp.seed), exp.train, exp.seed,
                          log=lambda m: print(m, flush=True))
    reports = run_ablation(train, test, base, parse_configs(args.configs), exp.train, exp.seed, args.bench_reps)
    print(format_table(reports))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(reports_to_csv(reports))


if __name__ == "__main__":
    main()
