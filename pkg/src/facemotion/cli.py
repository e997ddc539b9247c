"""Command-line entry points: train, animate, evaluate, synth, detect.

Exit codes: 0 success, 2 configuration error, 3 data or layout error,
4 numerical abort during training.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import (ConfigError, DataError, DegenerateError, DimensionError, LayoutError,
                     NumericalAbort, ParameterError, RegionError)
from .generator import animate_sequence
from .landmarks import (DetectorConfig, LandmarkSet, detect_toy, load_detector,
                        read_landmarks_file, save_detector, write_landmarks_file)
from .synthface import SynthDataset, export_dataset, load_dataset, resize_square
from .training import (METRICS, GroundTruthExtractor, RunConfig, detector_extractor,
                       evaluate_model, load_checkpoint, train)
from .warpfield import norm_to_pixel, pixel_to_norm, save_field

log = logging.getLogger("facemotion")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

TOGGLES = {
    "no_adain": "use_adain",
    "no_add_motion": "use_add_motion",
    "no_local": "use_local",
    "no_field_input": "use_field",
    "no_parsing": "parsing_loss",
}


def _add_config_flags(p: argparse.ArgumentParser, skip=()) -> None:
    p.add_argument("--config", help="flat 'key = value' config file")
    group = p.add_argument_group("config overrides (any config key)")
    for f in dataclasses.fields(RunConfig):
        if f.name in skip:
            continue
        names = [f"--{f.name}"]
        if "_" in f.name:
            names.append(f"--{f.name.replace('_', '-')}")
        group.add_argument(*names, dest=f"cfg_{f.name}", metavar="VALUE", default=None)
    for flag in TOGGLES:
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, action="store_true")


def resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else (base or RunConfig())
    values = {f.name: getattr(args, f"cfg_{f.name}") for f in dataclasses.fields(RunConfig)
              if getattr(args, f"cfg_{f.name}", None) is not None}
    for flag, key in TOGGLES.items():
        if getattr(args, flag, False):
            values[key] = False
    return cfg.updated(values).validate()


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


# --------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    ckpt = Path(cfg.checkpoint)

    def progress(rec):
        if rec["iter"] % max(args.print_every, 1) == 0:
            print(f"iter {rec['iter']:6d}  total {rec['total']:.5f}  l1 {rec['l1']:.5f}", flush=True)

    res = train(cfg, log_path=cfg.log_file or None, progress=progress if args.print_every else None)
    ckpt.with_suffix(".cfg").write_text(cfg.to_text())
    last = res.history[-1]["total"] if res.history else float("nan")
    print(f"trained {cfg.iterations} iterations, final total loss {last:.5f}; checkpoint {ckpt}")
    return EXIT_OK


# --------------------------------------------------------------------------
# animate


def _load_image(path) -> torch.Tensor:
    try:
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None
    return torch.from_numpy(arr).permute(2, 0, 1)


def _to_crop_frame(points: np.ndarray, h: int, w: int, crop) -> np.ndarray:
    """Normalized full-image coords -> normalized coords of the square crop."""
    ox, oy, side = crop
    px = norm_to_pixel(points[:, 0], w) - ox
    py = norm_to_pixel(points[:, 1], h) - oy
    return np.stack([pixel_to_norm(px, side), pixel_to_norm(py, side)], 1)


def _from_crop_frame(points: np.ndarray, h: int, w: int, crop, size: int) -> np.ndarray:
    ox, oy, side = crop
    px = (norm_to_pixel(points[:, 0], size) + 0.5) * side / size - 0.5 + ox
    py = (norm_to_pixel(points[:, 1], size) + 0.5) * side / size - 0.5 + oy
    return np.stack([pixel_to_norm(px, w), pixel_to_norm(py, h)], 1)


def _to_uint8(img: torch.Tensor) -> np.ndarray:
    arr = img.detach().clamp(0, 1).permute(1, 2, 0).double().numpy()
    return np.round(arr * 255.0).astype(np.uint8)


def cmd_animate(args) -> int:
    animator, cfg, state = load_checkpoint(args.checkpoint)
    layout = state["layout_id"]
    seq = read_landmarks_file(args.landmarks, layout)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not seq:
        print("landmarks file is empty; no frames written")
        return EXIT_OK
    img = _load_image(args.source)
    h, w = img.shape[1:]
    src, crop = resize_square(img, cfg.image_size)
    src = src.float()[None]
    if args.source_landmarks:
        recs = read_landmarks_file(args.source_landmarks, layout)
        if not recs:
            raise DataError(f"{args.source_landmarks} has no landmark record")
        s_pts = _to_crop_frame(recs[0].points, h, w, crop)
    else:
        s_pts = seq[0].points
    s_lm = torch.as_tensor(s_pts, dtype=torch.float32)[None]
    frames, fields = animate_sequence(src, s_lm, [lm.points for lm in seq], animator, return_fields=True)
    packed = []
    for k, frame in enumerate(frames):
        arr = _to_uint8(frame[0])
        Image.fromarray(arr).save(out / f"frame_{k:05d}.png")
        packed.append(arr)
    if args.dump_field:
        (out / "fields").mkdir(exist_ok=True)
        for k, field in enumerate(fields):
            save_field(out / "fields" / f"field_{k:05d}.bin", field)
    if args.npz:
        np.savez_compressed(args.npz, frames=np.stack(packed))
    print(f"wrote {len(frames)} frames to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise ConfigError(f"unknown metric(s): {', '.join(unknown)}; choose from {', '.join(METRICS)}")
    if args.ground_truth:
        animator, base = None, RunConfig()
    else:
        if not args.checkpoint:
            raise ConfigError("evaluate needs --checkpoint or --ground-truth")
        animator, base, _ = load_checkpoint(args.checkpoint)
    cfg = resolve_config(args, base)
    if cfg.dataset == "synth":
        dataset = SynthDataset.generate(cfg.n_videos, cfg.n_frames, cfg.image_size, cfg.data_seed)
    else:
        dataset = load_dataset(cfg.dataset, cfg.image_size)
    extractor = None
    if args.detector:
        extractor = detector_extractor(load_detector(args.detector))
    elif "akd" in metrics or "sms" in metrics:
        # only frames identical to a dataset frame can be looked up; others are skipped
        gt = GroundTruthExtractor()
        imgs, lms, _, _ = dataset.tensors()
        for frame, lm in zip(imgs, lms):
            gt.register(frame, lm.numpy())

        def extractor(frame):
            return gt(frame)
    report = evaluate_model(animator, dataset, metrics, extractor,
                            metadata={"dataset": cfg.dataset, "data_seed": cfg.data_seed,
                                      "checkpoint": args.checkpoint or "ground-truth"})
    if args.report:
        Path(args.report).write_text(report.to_text())
    print(report.table())
    return EXIT_OK


# --------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    if args.size < 32:
        raise ConfigError("--size must be at least 32")
    ds = SynthDataset.generate(args.n_videos, args.n_frames, args.size, args.seed,
                               gaze_only=args.gaze_only, noise=args.noise)
    export_dataset(ds, args.out, meta={"seed": args.seed, "gaze_only": args.gaze_only,
                                       "noise": args.noise})
    print(f"wrote {len(ds)} videos to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# detect


def _detector_dataset(args) -> SynthDataset:
    if args.dataset == "synth":
        return SynthDataset.generate(args.n_videos, args.n_frames, args.size, args.seed,
                                     noise=args.noise)
    return load_dataset(args.dataset, args.size)


def cmd_detect_train(args) -> int:
    from .experiments import clip_tensors, detector_tensors
    from .landmarks import finetune_detector, train_detector

    cfg = DetectorConfig(image_size=args.size, width=args.width, steps=args.steps,
                         finetune_steps=args.finetune_steps,
                         registration_weight=args.registration_weight, seed=args.seed)
    dataset = _detector_dataset(args)
    imgs, lms = detector_tensors(dataset)
    det = train_detector(imgs, lms, cfg)
    if cfg.finetune_steps > 0:
        clips, clip_lms, flows = clip_tensors(dataset)
        finetune_detector(det, clips, clip_lms, flows, cfg)
    save_detector(args.out, det.eval(), cfg)
    print(f"detector saved to {args.out}")
    return EXIT_OK


def cmd_detect_run(args) -> int:
    det = load_detector(args.detector)
    paths = sorted(p for p in Path(args.frames).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    records = []
    for path in paths:
        img = _load_image(path)
        h, w = img.shape[1:]
        sq, crop = resize_square(img, det.image_size)
        pts = detect_toy(sq.float(), det).points
        records.append(LandmarkSet(_from_crop_frame(pts, h, w, crop, det.image_size)))
    write_landmarks_file(args.out, records)
    print(f"wrote landmarks for {len(records)} frames to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facemotion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the animation model")
    _add_config_flags(p)
    p.add_argument("--print-every", type=int, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("animate", help="animate a source image with a landmark sequence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True, help="source image")
    p.add_argument("--landmarks", required=True, help="driving landmarks file")
    p.add_argument("--source-landmarks", help="landmarks of the source image (default: first driving record)")
    p.add_argument("--out", required=True, help="output directory for frame_NNNNN.png")
    p.add_argument("--npz", help="also write all frames to this packed .npz file")
    p.add_argument("--dump-field", action="store_true", help="write per-frame motion fields")
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("evaluate", help="same-identity evaluation of a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--ground-truth", action="store_true", help="evaluate ground truth against itself")
    p.add_argument("--metrics", default="l1,psnr,ssim,msssim")
    p.add_argument("--detector", help="toy detector checkpoint used for akd/sms")
    p.add_argument("--report", help="write per-frame records and the summary here")
    _add_config_flags(p, skip=("checkpoint",))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic face video dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-videos", type=int, default=50)
    p.add_argument("--n-frames", type=int, default=30)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gaze-only", action="store_true")
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="train or run the toy landmark detector")
    dsub = p.add_subparsers(dest="action", required=True)
    t = dsub.add_parser("train")
    t.add_argument("--out", required=True)
    t.add_argument("--dataset", default="synth")
    t.add_argument("--n-videos", type=int, default=50)
    t.add_argument("--n-frames", type=int, default=30)
    t.add_argument("--size", type=int, default=64)
    t.add_argument("--noise", type=float, default=0.0)
    t.add_argument("--width", type=int, default=32)
    t.add_argument("--steps", type=int, default=DetectorConfig.steps)
    t.add_argument("--finetune-steps", type=int, default=0)
    t.add_argument("--registration-weight", type=float, default=DetectorConfig.registration_weight)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_detect_train)
    r = dsub.add_parser("run")
    r.add_argument("--detector", required=True)
    r.add_argument("--frames", required=True, help="directory of frame images")
    r.add_argument("--out", required=True, help="landmarks file to write")
    r.set_defaults(func=cmd_detect_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, LayoutError, DimensionError, RegionError, DegenerateError,
            FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
