"""Toy detector accuracy and the effect of the flow registration term on jitter.

Trains one base detector, then per seed fine-tunes two copies on the same
clips, one with the registration term and one without, and compares
landmark error and SMS on held-out videos.

    python3 scripts/detector_registration.py --seeds 0 1 2
"""
import argparse
import json
from pathlib import Path

from facemotion.experiments import (detector_sms, detector_tensors, finetune_pair, gt_sms,
                                    landmark_error_px, train_base_detector)
from facemotion.landmarks import DetectorConfig, load_detector, save_detector
from facemotion.synthface import SynthDataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=DetectorConfig.steps)
    ap.add_argument("--finetune-steps", type=int, default=300)
    ap.add_argument("--width", type=int, default=32)
    ap.add_argument("--noise", type=float, default=0.02)
    ap.add_argument("--registration-weight", type=float, default=20.0,
                    help="weight of the registration term during fine-tuning (the acceptance setting)")
    ap.add_argument("--finetune-lr", type=float, default=DetectorConfig.finetune_lr)
    ap.add_argument("--base", help="reuse a saved base detector; trained and saved here if missing")
    args = ap.parse_args()

    cfg = DetectorConfig(width=args.width, steps=args.steps, finetune_steps=args.finetune_steps,
                         registration_weight=args.registration_weight, finetune_lr=args.finetune_lr)
    train_ds = SynthDataset.generate(50, 30, 64, seed=0, noise=args.noise)
    test_ds = SynthDataset.generate(10, 30, 64, seed=10_000, noise=args.noise)
    imgs, lms = detector_tensors(test_ds)
    if args.base and Path(args.base).exists():
        base = load_detector(args.base)
    else:
        base = train_base_detector(train_ds, cfg)
        if args.base:
            save_detector(args.base, base, cfg)
    print(json.dumps({"base_error_px": landmark_error_px(base, imgs, lms),
                      "base_sms": detector_sms(base, test_ds), "gt_sms": gt_sms(test_ds)}), flush=True)
    for seed in args.seeds:
        plain, reg = finetune_pair(base, train_ds, cfg, seed)
        print(json.dumps({"seed": seed,
                          "plain_error_px": landmark_error_px(plain, imgs, lms),
                          "reg_error_px": landmark_error_px(reg, imgs, lms),
                          "plain_sms": detector_sms(plain, test_ds),
                          "reg_sms": detector_sms(reg, test_ds)}), flush=True)


if __name__ == "__main__":
    main()
