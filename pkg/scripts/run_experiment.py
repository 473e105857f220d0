"""Train a pinned experiment end to end and report per-frame vs propagated quality.

    python3 scripts/run_experiment.py reference --configs f
    python3 scripts/run_experiment.py fast_motion --configs a,f --out runs/fast
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from mmnet.config import EXPERIMENTS
from mmnet.data import frame_dataset, gop_dataset, make_clips, save_model
from mmnet.detector import init_model, run_phase1, run_phase2
from mmnet.evaluation import evaluate, format_table, parse_configs, reports_to_csv


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("preset", choices=sorted(EXPERIMENTS))
    parser.add_argument("--configs", default="f", help="ablation configs trained in phase 2")
    parser.add_argument("--out", default=None, help="directory for checkpoints and report.csv")
    args = parser.parse_args()

    exp = EXPERIMENTS[args.preset]
    print("config:", json.dumps(exp.to_dict(), default=str, sort_keys=True), flush=True)
    start = time.perf_counter()
    train = make_clips(exp.scene, exp.train_clips, exp.seed, exp.gop_len, exp.search_range, "train")
    test = make_clips(exp.scene, exp.test_clips, exp.test_seed, exp.gop_len, exp.search_range, "test")
    base = run_phase1(frame_dataset(train), init_model(exp.model, exp.seed), exp.train, exp.seed,
                      log=lambda m: print(m, flush=True))
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        save_model(out / "phase1.mmnt", base)

    reports = []
    for flags in parse_configs(args.configs):
        model = run_phase2(gop_dataset(train), base, exp.train, exp.seed, flags)
        reports.append(evaluate(model, test, flags, "frame", exp.score_threshold, exp.nms_iou, f"{flags.name}_frame"))
        reports.append(evaluate(model, test, flags, "gop", exp.score_threshold, exp.nms_iou, flags.name))
        if out:
            save_model(out / f"{flags.name}.mmnt", model)
        print(format_table(reports[-2:]), flush=True)
    print(f"bucket counts: {reports[0].bucket_counts}")
    print(format_table(reports))
    print(f"elapsed {time.perf_counter() - start:.0f}s")
    if out:
        (out / "report.csv").write_text(reports_to_csv(reports))


if __name__ == "__main__":
    main()
