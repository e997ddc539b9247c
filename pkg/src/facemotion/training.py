"""Run configuration, the adversarial training loop, checkpoints and evaluation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .errors import ConfigError, DataError, LayoutError, NumericalAbort
from .generator import Animator, DiscriminatorNet, GeneratorConfig
from .landmarks import ToyDetector
from .losses import (LossWeights, lsgan_d_loss, lsgan_g_loss, make_extractor, parsing_loss,
                     perceptual_loss, reconstruction_l1, soft_parsing_loss, total_loss)
from .metrics import (MetricReport, akd_per_frame, max_msssim_scales, metric_l1, metric_msssim,
                      metric_psnr, metric_sms, metric_ssim)
from .motion_net import MotionNetConfig
from .synthface import PALETTE, SynthDataset, load_dataset

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "facemotion-checkpoint"
CHECKPOINT_VERSION = 1
METRICS = ("l1", "psnr", "ssim", "msssim", "akd", "sms")


@dataclass
class RunConfig:
    # data
    dataset: str = "synth"          # "synth" or a dataset directory with manifest.json
    n_videos: int = 50
    n_frames: int = 30
    data_seed: int = 0
    image_size: int = 64
    pairs_per_video: int = 4
    # architecture
    patch_size: int = 0             # 0: image_size // 4
    global_depth: int = 4
    local_depth: int = 3
    base_channels: int = 16
    local_base_channels: int = 16
    max_channels: int = 64
    gen_channels: int = 16
    disc_channels: int = 16
    use_local: bool = True
    use_adain: bool = True
    use_add_motion: bool = True
    use_field: bool = True
    # losses
    w_per: float = 1.0
    w_l1: float = 1.0
    w_gan: float = 1.0
    w_par: float = 1.0
    parsing_loss: bool = True
    extractor: str = "random-conv"
    # optimization
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 8
    iterations: int = 1000
    seed: int = 0
    # outputs
    checkpoint: str = "runs/model.pt"
    log_file: str = ""
    checkpoint_every: int = 500

    def validate(self) -> "RunConfig":
        if self.image_size < 16 or self.image_size & (self.image_size - 1):
            raise ConfigError(f"image_size must be a power of two >= 16, got {self.image_size}")
        for name in ("n_videos", "n_frames", "batch_size", "pairs_per_video"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.iterations < 0:
            raise ConfigError("iterations must be nonnegative")
        if not self.lr > 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ConfigError("invalid optimizer settings")
        if self.extractor not in ("identity", "random-conv"):
            raise ConfigError(f"unknown feature extractor {self.extractor!r}")
        self.loss_weights()
        self.motion_config()
        return self

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w_per, self.w_l1, self.w_gan,
                           self.w_par if self.parsing_loss else 0.0)

    def motion_config(self) -> MotionNetConfig:
        try:
            cfg = MotionNetConfig(
                image_size=self.image_size, patch_size=self.patch_size or None,
                global_depth=self.global_depth, local_depth=self.local_depth,
                base_channels=self.base_channels, max_channels=self.max_channels,
                local_base_channels=self.local_base_channels, local_max_channels=self.max_channels,
                use_local=self.use_local, use_adain=self.use_adain,
                use_add_motion=self.use_add_motion)
            cfg.global_branch()
            cfg.local_branches()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(base_channels=self.gen_channels, use_field=self.use_field)

    # flat key = value text
    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        return cls().updated(parse_kv(text, source))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text, str(path))

    def updated(self, values: dict) -> "RunConfig":
        types = {f.name: f.type for f in fields(self)}
        out = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            out[key] = _coerce(key, raw, types[key])
        return dataclasses.replace(self, **out)


def _fmt(v):
    return str(v).lower() if isinstance(v, bool) else str(v)


def _coerce(key, raw, typ):
    if not isinstance(raw, str):
        return raw
    try:
        if typ in ("bool", bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw.strip()


def parse_kv(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = val
    return out


# --------------------------------------------------------------------------
# checkpoints


def build_animator(cfg: RunConfig) -> Animator:
    return Animator(cfg.motion_config(), cfg.generator_config())


def save_checkpoint(path, animator: Animator, cfg: RunConfig, iteration: int = 0,
                    discriminator: DiscriminatorNet | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layout_id": animator.motion.cfg.layout_id,
        "config": asdict(cfg),
        "model_config": animator.config_dict(),
        "iteration": iteration,
        "animator": animator.state_dict(),
        "discriminator": discriminator.state_dict() if discriminator is not None else None,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(state, tmp)
    tmp.replace(path)


def load_checkpoint(path, layout_id: str = "74") -> tuple[Animator, RunConfig, dict]:
    try:
        state = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(state, dict) or state.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a facemotion checkpoint")
    if state.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {state.get('version')}")
    if state["layout_id"] != layout_id:
        raise LayoutError(f"checkpoint layout {state['layout_id']} != requested {layout_id}")
    cfg = RunConfig(**state["config"])
    animator = build_animator(cfg)
    animator.load_state_dict(state["animator"])
    animator.eval()
    return animator, cfg, state


# --------------------------------------------------------------------------
# data


def load_training_data(cfg: RunConfig) -> SynthDataset:
    if cfg.dataset == "synth":
        return SynthDataset.generate(cfg.n_videos, cfg.n_frames, cfg.image_size, cfg.data_seed)
    root = Path(cfg.dataset)
    if not root.exists():
        raise DataError(f"dataset {root} does not exist")
    return load_dataset(root, cfg.image_size)


class PairSampler:
    """Epochs of ``pairs_per_video`` random same-video pairs per video, shuffled."""

    def __init__(self, offsets, pairs_per_video: int, seed: int):
        self.offsets = offsets
        self.k = pairs_per_video
        self.rng = np.random.default_rng(seed)
        self.queue: list[tuple[int, int]] = []

    def _refill(self):
        pairs = []
        for start, n in self.offsets:
            for _ in range(self.k):
                pairs.append((start + int(self.rng.integers(n)), start + int(self.rng.integers(n))))
        order = self.rng.permutation(len(pairs))
        self.queue.extend(pairs[i] for i in order)

    def batch(self, size: int):
        while len(self.queue) < size:
            self._refill()
        out, self.queue = self.queue[:size], self.queue[size:]
        src, drv = zip(*out)
        return torch.tensor(src), torch.tensor(drv)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    animator: Animator
    discriminator: DiscriminatorNet
    history: list[dict]
    config: RunConfig


def _log_record(it, terms, total, d_loss, par_hard):
    rec = {"iter": it}
    for key in ("per", "l1", "gan", "par"):
        val = terms.get(key)
        rec[key] = None if val is None else float(val.detach()) if torch.is_tensor(val) else float(val)
    rec["par_hard"] = None if par_hard is None else float(par_hard)
    rec["total"] = float(total)
    rec["d"] = None if d_loss is None else float(d_loss.detach())
    return rec


def train(cfg: RunConfig, dataset: SynthDataset | None = None, log_path=None,
          save: bool = True, progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Alternating generator / discriminator training on source-driving pairs."""
    cfg.validate()
    torch.manual_seed(cfg.seed)
    dataset = dataset if dataset is not None else load_training_data(cfg)
    if dataset.size != cfg.image_size:
        raise DataError(f"dataset is {dataset.size}px, config expects {cfg.image_size}px")
    imgs, lms, pars, offsets = dataset.tensors()
    animator = build_animator(cfg)
    disc = DiscriminatorNet(cfg.disc_channels)
    fx = make_extractor(cfg.extractor, seed=cfg.seed)
    weights = cfg.loss_weights()
    opt_g = torch.optim.Adam(animator.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    sampler = PairSampler(offsets, cfg.pairs_per_video, cfg.seed)
    history: list[dict] = []
    log_fh = open(log_path, "w") if log_path else None
    use_par = cfg.parsing_loss and weights.w_par > 0
    try:
        if save:
            save_checkpoint(cfg.checkpoint, animator, cfg, 0, disc)
        for it in range(cfg.iterations):
            si, di = sampler.batch(cfg.batch_size)
            src, drv = imgs[si], imgs[di]
            out, field, _ = animator(src, lms[si], lms[di])
            terms = {
                "per": perceptual_loss(drv, out, fx) if weights.w_per > 0 else None,
                "l1": reconstruction_l1(drv, out),
                "gan": lsgan_g_loss(disc(out)) if weights.w_gan > 0 else None,
                "par": soft_parsing_loss(pars[si], pars[di], field, len(PALETTE)) if use_par else None,
            }
            total = total_loss({k: v for k, v in terms.items() if v is not None and torch.isfinite(v)},
                               weights)
            if not all(v is None or bool(torch.isfinite(v)) for v in terms.values()) \
                    or not bool(torch.isfinite(torch.as_tensor(total))):
                raise NumericalAbort(f"non-finite loss at iteration {it}")
            opt_g.zero_grad()
            total.backward()
            opt_g.step()
            d_loss = None
            if weights.w_gan > 0:
                d_loss = lsgan_d_loss(disc(drv), disc(out.detach()))
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
            par_hard = parsing_loss(pars[si], pars[di], field) if use_par else None
            rec = _log_record(it, terms, total.detach(), d_loss, par_hard)
            history.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
            if progress:
                progress(rec)
            if save and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(cfg.checkpoint, animator, cfg, it + 1, disc)
        if save:
            save_checkpoint(cfg.checkpoint, animator, cfg, cfg.iterations, disc)
    finally:
        if log_fh:
            log_fh.close()
    animator.eval()
    return TrainResult(animator, disc, history, cfg)


# --------------------------------------------------------------------------
# evaluation


def reconstruct_video(animator: Animator, images: torch.Tensor, landmarks: torch.Tensor,
                      source_index: int = 0, batch: int = 16) -> torch.Tensor:
    """Drive frame ``source_index`` with every frame's landmarks; (T, 3, S, S) out."""
    outs = []
    src = images[source_index:source_index + 1]
    s_lm = landmarks[source_index:source_index + 1]
    with torch.no_grad():
        for k in range(0, len(images), batch):
            d = landmarks[k:k + batch]
            out, _, _ = animator(src.expand(len(d), -1, -1, -1), s_lm.expand(len(d), -1, -1), d)
            outs.append(out)
    return torch.cat(outs)


class GroundTruthExtractor:
    """Looks frames up by content and returns their known landmarks."""

    def __init__(self):
        self.table: dict[str, np.ndarray] = {}

    @staticmethod
    def _key(frame) -> str:
        arr = frame.detach().cpu().numpy() if torch.is_tensor(frame) else np.asarray(frame)
        return hashlib.sha1(np.ascontiguousarray(arr, dtype=np.float32).tobytes()).hexdigest()

    def register(self, frame, landmarks) -> None:
        pts = landmarks.points if hasattr(landmarks, "points") else np.asarray(landmarks)
        self.table[self._key(frame)] = pts

    def __call__(self, frame):
        try:
            return self.table[self._key(frame)]
        except KeyError:
            raise DataError("frame has no registered landmarks") from None


def detector_extractor(detector: ToyDetector):
    def extract(frame):
        x = frame if torch.is_tensor(frame) else torch.as_tensor(np.asarray(frame))
        if x.dim() == 3:
            x = x.unsqueeze(0)
        with torch.no_grad():
            return detector.predict(x.float())[0]
    return extract


def evaluate_frames(gen_videos: Sequence[torch.Tensor], gt_videos: Sequence[torch.Tensor],
                    metrics: Sequence[str], extractor: Callable | None = None,
                    metadata: dict | None = None) -> MetricReport:
    """Metric report over lists of (T, 3, S, S) generated / ground-truth videos."""
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise ConfigError(f"unknown metric(s): {', '.join(unknown)}")
    if ("akd" in metrics or "sms" in metrics) and extractor is None:
        raise ConfigError("akd/sms need a landmark extractor")
    report = MetricReport(metadata=dict(metadata or {}))
    sms_vals = []
    for gen, gt in zip(gen_videos, gt_videos):
        size = gt.shape[-1]
        scales = max_msssim_scales(*gt.shape[-2:])
        for g, t in zip(gen, gt):
            if "l1" in metrics:
                report.add("l1", metric_l1(g, t))
            if "psnr" in metrics:
                report.add("psnr", metric_psnr(g, t))
            if "ssim" in metrics:
                report.add("ssim", metric_ssim(g, t))
            if "msssim" in metrics:
                report.add("msssim", metric_msssim(g, t, scales=scales))
        if "akd" in metrics:
            vals = akd_per_frame(list(gen), list(gt), extractor, size)
            for v in vals:
                report.add("akd", v)
            report.skipped["akd"] = report.skipped.get("akd", 0) + sum(v is None for v in vals)
        if "sms" in metrics and len(gen) >= 3:
            traj = [np.asarray(extractor(g)) for g in gen]
            sms_vals.append(metric_sms(traj, size))
    if sms_vals:
        report.scalars["sms"] = float(np.mean(sms_vals))
    return report


def evaluate_model(animator: Animator | None, dataset: SynthDataset, metrics: Sequence[str],
                   extractor: Callable | None = None, metadata: dict | None = None) -> MetricReport:
    """Same-identity protocol: frame 0 is the source, every frame drives it.

    ``animator=None`` evaluates the ground truth against itself.
    """
    imgs, lms, _, offsets = dataset.tensors()
    gens, gts = [], []
    for start, n in offsets:
        gt = imgs[start:start + n]
        gen = gt if animator is None else reconstruct_video(animator, gt, lms[start:start + n])
        gens.append(gen)
        gts.append(gt)
    return evaluate_frames(gens, gts, metrics, extractor, metadata)
