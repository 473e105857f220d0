"""Throughput of full extraction vs propagation at several GOP lengths and extractor depths.

    python3 scripts/bench_throughput.py --gops 1,4,12 --depths 4,8
"""

from __future__ import annotations

import argparse
import dataclasses

from mmnet.config import REFERENCE
from mmnet.data import make_clips
from mmnet.detector import init_model
from mmnet.evaluation import bench_throughput


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--gops", default="1,12", help="comma-separated GOP lengths")
    parser.add_argument("--depths", default=str(REFERENCE.model.extractor.convs_per_stage),
                        help="comma-separated convs per stage")
    parser.add_argument("--frames", type=int, default=60, help="frames per clip (two clips)")
    parser.add_argument("--reps", type=int, default=REFERENCE.bench_repetitions)
    parser.add_argument("--seed", type=int, default=REFERENCE.seed)
    args = parser.parse_args()

    scene = dataclasses.replace(REFERENCE.scene, n_frames=args.frames)
    print("depth  gop   fps_full   fps_prop   ratio")
    for depth in (int(d) for d in args.depths.split(",")):
        extractor = dataclasses.replace(REFERENCE.model.extractor, convs_per_stage=depth)
        model = init_model(dataclasses.replace(REFERENCE.model, extractor=extractor), args.seed)
        for gop in (int(g) for g in args.gops.split(",")):
            clips = make_clips(scene, 2, args.seed, gop, REFERENCE.search_range, "bench")
            full, prop, ratio = bench_throughput(model, clips, args.reps)
            print(f"{depth:5d}  {gop:3d}  {full:9.2f}  {prop:9.2f}  {ratio:6.3f}", flush=True)


if __name__ == "__main__":
    main()
