"""Desk-scale experiment helpers shared by the acceptance tests, the
``scripts/`` runners and the CLI.

The numbers chosen here (network widths, learning rate, step budgets) are
sized so the full acceptance suite finishes in roughly an hour on one CPU core.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np
import torch

from .generator import Animator
from .landmarks import (DetectorConfig, Layout74, ToyDetector, finetune_detector,
                        landmarks_to_pixels, train_detector)
from .metrics import metric_sms
from .synthface import SynthDataset, Video, gaze_sweep
from .training import RunConfig, reconstruct_video, train
from .warpfield import RegionSpec, identity_field

log = logging.getLogger(__name__)

# narrow networks with a raised step size; see the README for measured budgets
DESK_OVERRIDES = dict(base_channels=8, local_base_channels=8, max_channels=32, gen_channels=8,
                      disc_channels=8, lr=1e-3)


def desk_config(**overrides) -> RunConfig:
    cfg = dataclasses.replace(RunConfig(), **DESK_OVERRIDES)
    return dataclasses.replace(cfg, **overrides).validate()


# --------------------------------------------------------------------------
# animation model checks


def video_tensors(video: Video):
    imgs = torch.from_numpy(np.stack([f.image for f in video.frames])).permute(0, 3, 1, 2).float()
    lms = torch.from_numpy(np.stack([f.landmarks.points for f in video.frames])).float()
    return imgs.contiguous(), lms


@dataclass
class ReconstructionScores:
    model_l1: float       # frame 0 driven by every frame's landmarks
    copy_l1: float        # frame 0 copied to every frame
    self_l1: float        # frame 0 driven by its own landmarks

    @property
    def ratio(self) -> float:
        return self.model_l1 / self.copy_l1


def reconstruction_scores(animator: Animator, dataset: SynthDataset) -> ReconstructionScores:
    """Same-identity reconstruction on every video of ``dataset``."""
    imgs, lms, _, offsets = dataset.tensors()
    model, copy, own = [], [], []
    for start, n in offsets:
        gt, lm = imgs[start:start + n], lms[start:start + n]
        out = reconstruct_video(animator, gt, lm)
        model.append((out - gt).abs().mean().item())
        copy.append((gt[:1] - gt).abs().mean().item())
        with torch.no_grad():
            o, _, _ = animator(gt[:1], lm[:1], lm[:1])
        own.append((o - gt[:1]).abs().mean().item())
    return ReconstructionScores(float(np.mean(model)), float(np.mean(copy)), float(np.mean(own)))


def self_field_fraction(animator: Animator, dataset: SynthDataset, tol_px: float = 0.5) -> float:
    """Fraction of pixels whose self-driven field stays within ``tol_px`` of identity."""
    imgs, lms, _, offsets = dataset.tensors()
    size = imgs.shape[-1]
    ident = identity_field(size, size)
    good, total = 0, 0
    with torch.no_grad():
        for start, _ in offsets:
            field = animator.motion(imgs[start:start + 1], lms[start:start + 1], lms[start:start + 1])
            err = ((field - ident) * (size / 2.0)).norm(dim=-1)
            good += int((err <= tol_px).sum())
            total += err.numel()
    return good / total


def eye_region_mask(landmarks: torch.Tensor, size: int, patch: int | None = None) -> torch.Tensor:
    """Boolean (size, size) mask covering both eye patches around the given frame's landmarks."""
    patch = patch or size // 4
    pix = landmarks_to_pixels(landmarks.double(), size, size)
    mask = torch.zeros(size, size, dtype=torch.bool)
    for name in ("left_eye", "right_eye"):
        c = pix[Layout74.regions[name]].mean(0).tolist()
        rows, cols = RegionSpec.around(c, patch, size, size).slices
        mask[rows, cols] = True
    return mask


def gaze_sweep_scores(animator: Animator, videos: list[Video]) -> tuple[float, float]:
    """(eye-region L1, whole-frame L1) driving frame 0 of each sweep with all its frames."""
    eye, full = [], []
    for v in videos:
        imgs, lms = video_tensors(v)
        out = reconstruct_video(animator, imgs, lms)
        diff = (out - imgs).abs().mean(1)
        mask = eye_region_mask(lms[0], imgs.shape[-1])
        eye.append(diff[:, mask].mean().item())
        full.append(diff.mean().item())
    return float(np.mean(eye)), float(np.mean(full))


def gaze_sweeps(n: int, seed: int = 1000, size: int = 64, n_frames: int = 10) -> list[Video]:
    return [gaze_sweep(seed + i, n_frames, size) for i in range(n)]


ABLATIONS = {
    "full": {},
    "no-local": {"use_local": False},
    "no-adain": {"use_adain": False},
    "no-add-motion": {"use_add_motion": False},
}


def run_ablation(variant: str, seed: int, dataset: SynthDataset, iterations: int,
                 eval_videos: list[Video], **overrides) -> dict:
    cfg = desk_config(iterations=iterations, seed=seed, **ABLATIONS[variant], **overrides)
    t0 = time.time()
    res = train(cfg, dataset, save=False)
    eye, full = gaze_sweep_scores(res.animator, eval_videos)
    out = {"variant": variant, "seed": seed, "eye_l1": eye, "l1": full,
           "seconds": time.time() - t0}
    log.info("ablation %s", out)
    return out


# --------------------------------------------------------------------------
# detector experiments


def detector_tensors(dataset: SynthDataset):
    imgs, lms, _, _ = dataset.tensors()
    return imgs, lms


def clip_tensors(dataset: SynthDataset, clip_len: int = 3):
    """Non-overlapping clips of ``clip_len`` consecutive frames with their forward flows."""
    clips, clip_lms, flows = [], [], []
    for v in dataset.videos:
        for s in range(0, len(v) - clip_len + 1, clip_len):
            frames = v.frames[s:s + clip_len]
            imgs, lms = video_tensors(Video(frames))
            clips.append(imgs)
            clip_lms.append(lms)
            flows.append(torch.from_numpy(np.stack([f.flow_to_next for f in frames[:-1]])).float())
    return torch.stack(clips), torch.stack(clip_lms), torch.stack(flows)


def predict_landmarks(detector: ToyDetector, imgs: torch.Tensor, batch: int = 64) -> torch.Tensor:
    out = []
    with torch.no_grad():
        for k in range(0, len(imgs), batch):
            out.append(detector.predict(imgs[k:k + batch]))
    return torch.cat(out)


def landmark_error_px(detector: ToyDetector, imgs: torch.Tensor, lms: torch.Tensor) -> float:
    """Mean Euclidean landmark error in pixels."""
    pred = predict_landmarks(detector, imgs)
    return float((pred - lms).norm(dim=-1).mean() * imgs.shape[-1] / 2.0)


def detector_sms(detector: ToyDetector, dataset: SynthDataset) -> float:
    """Mean per-video SMS (pixels) of detected landmark trajectories."""
    imgs, _, _, offsets = dataset.tensors()
    pred = predict_landmarks(detector, imgs)
    size = imgs.shape[-1]
    return float(np.mean([metric_sms(pred[s:s + n].double().numpy(), size) for s, n in offsets]))


def gt_sms(dataset: SynthDataset) -> float:
    _, lms, _, offsets = dataset.tensors()
    size = dataset.size
    return float(np.mean([metric_sms(lms[s:s + n].double().numpy(), size) for s, n in offsets]))


def train_base_detector(dataset: SynthDataset, cfg: DetectorConfig) -> ToyDetector:
    imgs, lms = detector_tensors(dataset)
    return train_detector(imgs, lms, cfg)


def finetune_pair(base: ToyDetector, dataset: SynthDataset, cfg: DetectorConfig, seed: int,
                  registration_weight: float | None = None) -> tuple[ToyDetector, ToyDetector]:
    """Fine-tune copies of ``base`` with and without the registration term.

    Both copies see the same clips in the same order for the same number of
    steps, so the registration term is the only difference.
    """
    clips, clip_lms, flows = clip_tensors(dataset)
    cfg = dataclasses.replace(cfg, seed=seed)
    out = []
    for lam in (0.0, cfg.registration_weight if registration_weight is None else registration_weight):
        det = ToyDetector(base.image_size, base.n_points, base.width)
        det.load_state_dict(base.state_dict())
        torch.manual_seed(seed)
        out.append(finetune_detector(det, clips, clip_lms, flows, cfg, registration_weight=lam).eval())
    return out[0], out[1]
