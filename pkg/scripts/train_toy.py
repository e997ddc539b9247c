"""Train the desk-scale animation model and report held-out reconstruction.

    python3 scripts/train_toy.py --iterations 1000 --out runs/toy.pt
"""
import argparse
import json
import time

from facemotion.experiments import desk_config, reconstruction_scores, self_field_fraction
from facemotion.synthface import SynthDataset
from facemotion.training import save_checkpoint, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--held-out-videos", type=int, default=10)
    ap.add_argument("--out", default="runs/toy.pt")
    ap.add_argument("--no-local", action="store_true")
    args = ap.parse_args()

    cfg = desk_config(iterations=args.iterations, seed=args.seed, checkpoint=args.out,
                      use_local=not args.no_local)
    t0 = time.time()
    res = train(cfg, save=False, progress=lambda r: r["iter"] % 100 or print(
        f"iter {r['iter']:5d} total {r['total']:.4f} l1 {r['l1']:.4f}", flush=True))
    save_checkpoint(args.out, res.animator, cfg, cfg.iterations, res.discriminator)
    held_out = SynthDataset.generate(args.held_out_videos, cfg.n_frames, cfg.image_size, seed=10_000)
    s = reconstruction_scores(res.animator, held_out)
    print(json.dumps({"seconds": round(time.time() - t0), "model_l1": s.model_l1, "copy_l1": s.copy_l1,
                      "ratio": s.ratio, "self_l1": s.self_l1,
                      "self_field_fraction": self_field_fraction(res.animator, held_out)}, indent=2))


if __name__ == "__main__":
    main()
