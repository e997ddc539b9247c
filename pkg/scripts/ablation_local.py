"""Motion-branch ablations on gaze-only synthetic videos.

Trains each variant with the same seeds and step budget, then scores
eye-region and whole-frame L1 on held-out gaze sweeps.

    python3 scripts/ablation_local.py --seeds 0 1 2 --iterations 800
"""
import argparse
import json

from facemotion.experiments import ABLATIONS, gaze_sweeps, run_ablation
from facemotion.synthface import SynthDataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variants", nargs="+", default=list(ABLATIONS), choices=list(ABLATIONS))
    ap.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    ap.add_argument("--iterations", type=int, default=800)
    ap.add_argument("--n-videos", type=int, default=30)
    ap.add_argument("--n-frames", type=int, default=20)
    ap.add_argument("--sweeps", type=int, default=8)
    ap.add_argument("--out", help="write results as JSON lines")
    args = ap.parse_args()

    dataset = SynthDataset.generate(args.n_videos, args.n_frames, 64, seed=0, gaze_only=True)
    sweeps = gaze_sweeps(args.sweeps)
    rows = []
    for seed in args.seeds:
        for variant in args.variants:
            row = run_ablation(variant, seed, dataset, args.iterations, sweeps)
            print(json.dumps(row), flush=True)
            rows.append(row)
    if args.out:
        with open(args.out, "w") as fh:
            fh.writelines(json.dumps(r) + "\n" for r in rows)


if __name__ == "__main__":
    main()
