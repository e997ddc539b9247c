"""Landmark layout, heatmap/DSNT coordinate regression and detector training.

Landmarks are stored as ``(..., N, 2)`` tensors of normalized (x, y)
coordinates using the pixel-centre convention of ``warpfield``.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DataError, DegenerateError, DimensionError, LayoutError, ParameterError
from .warpfield import norm_to_pixel, pixel_to_norm

log = logging.getLogger(__name__)


class Layout74:
    """74-point layout: the 68 iBUG points plus pupils and eyelid midpoints.

    "left"/"right" refer to image sides.  Indices 68-73 extend the iBUG scheme:
    68/69 are the image-left/right pupils, 70/71 the upper/lower eyelid
    midpoints of the image-left eye and 72/73 those of the image-right eye.
    """

    n_points = 74
    layout_id = "74"

    jaw = list(range(0, 17))
    brow_left = list(range(17, 22))
    brow_right = list(range(22, 27))
    nose_bridge = list(range(27, 31))
    nose_base = list(range(31, 36))
    eye_left = list(range(36, 42))
    eye_right = list(range(42, 48))
    mouth_outer = list(range(48, 60))
    mouth_inner = list(range(60, 68))
    pupil_left = 68
    pupil_right = 69
    lids_left = [70, 71]
    lids_right = [72, 73]

    gaze_points = (68, 69)

    # local-branch subsets: brow + eye + pupil (12 points), both lips (20 points)
    left_eye_region = brow_left + eye_left + [pupil_left]
    right_eye_region = brow_right + eye_right + [pupil_right]
    mouth_region = mouth_outer + mouth_inner

    regions = {
        "left_eye": left_eye_region,
        "right_eye": right_eye_region,
        "mouth": mouth_region,
    }


LAYOUT_SIZES = {"68": 68, "74": 74}
for _name, _idx in Layout74.regions.items():
    LAYOUT_SIZES[f"74:{_name}"] = len(_idx)


@dataclass
class LandmarkSet:
    """Landmarks of one frame in normalized coordinates."""

    points: np.ndarray
    layout_id: str = "74"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise DimensionError(f"points must be (N, 2), got {self.points.shape}")
        expected = LAYOUT_SIZES.get(self.layout_id)
        if expected is None:
            raise LayoutError(f"unknown layout {self.layout_id!r}")
        if len(self.points) != expected:
            raise LayoutError(
                f"layout {self.layout_id} has {expected} points, got {len(self.points)}")

    def __len__(self):
        return len(self.points)

    def flatten(self) -> np.ndarray:
        return self.points.reshape(-1).copy()

    def subset(self, name: str) -> "LandmarkSet":
        if self.layout_id != "74":
            raise LayoutError("subsets are defined on the 74-point layout only")
        return LandmarkSet(self.points[Layout74.regions[name]], f"74:{name}")

    def to_pixels(self, height: int, width: int) -> np.ndarray:
        return np.stack([norm_to_pixel(self.points[:, 0], width),
                         norm_to_pixel(self.points[:, 1], height)], axis=1)

    def tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.as_tensor(self.points, dtype=dtype)


def landmarks_to_pixels(lms: torch.Tensor, height: int, width: int) -> torch.Tensor:
    return torch.stack([norm_to_pixel(lms[..., 0], width),
                        norm_to_pixel(lms[..., 1], height)], dim=-1)


def landmarks_to_norm(pix: torch.Tensor, height: int, width: int) -> torch.Tensor:
    return torch.stack([pixel_to_norm(pix[..., 0], width),
                        pixel_to_norm(pix[..., 1], height)], dim=-1)


# --------------------------------------------------------------------------
# heatmaps and DSNT


def render_heatmap(pt, h: int, w: int, sigma: float) -> torch.Tensor:
    """Unnormalized Gaussian of std ``sigma`` pixels centred on ``pt``.

    ``pt`` is a normalized (x, y) pair or a (..., 2) tensor; the result has
    shape (..., h, w).
    """
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    pt = torch.as_tensor(pt, dtype=torch.float64) if not torch.is_tensor(pt) else pt
    dtype = pt.dtype if pt.is_floating_point() else torch.float64
    px = norm_to_pixel(pt[..., 0], w)[..., None, None]
    py = norm_to_pixel(pt[..., 1], h)[..., None, None]
    xs = torch.arange(w, dtype=dtype, device=pt.device)
    ys = torch.arange(h, dtype=dtype, device=pt.device)[:, None]
    return torch.exp(-((xs - px) ** 2 + (ys - py) ** 2) / (2.0 * sigma ** 2))


def heatmap_probabilities(hm: torch.Tensor) -> torch.Tensor:
    """Subtract the per-map minimum, then divide by the sum."""
    if hm.dim() < 2:
        raise DimensionError("heatmap needs at least two dimensions")
    lead = hm.shape[:-2]
    flat = hm.reshape(*lead, -1)
    rect = flat - flat.min(dim=-1, keepdim=True).values
    total = rect.sum(dim=-1, keepdim=True)
    if bool((total <= 0).any()):
        raise DegenerateError("heatmap is constant; no coordinate can be recovered")
    return (rect / total).reshape(hm.shape)


def dsnt(hm: torch.Tensor) -> torch.Tensor:
    """Differentiable heatmap-to-coordinate transform.

    Returns the expected normalized (x, y) under the rectified, normalized
    heatmap.  Shape (..., h, w) -> (..., 2).  No trainable parameters.
    """
    if not torch.isfinite(hm).all():
        raise ParameterError("heatmap contains non-finite activations")
    h, w = hm.shape[-2:]
    prob = heatmap_probabilities(hm)
    xs = pixel_to_norm(torch.arange(w, dtype=hm.dtype, device=hm.device), w)
    ys = pixel_to_norm(torch.arange(h, dtype=hm.dtype, device=hm.device), h)
    x = (prob.sum(dim=-2) * xs).sum(dim=-1)
    y = (prob.sum(dim=-1) * ys).sum(dim=-1)
    return torch.stack([x, y], dim=-1)


# --------------------------------------------------------------------------
# losses


def regression_loss(pred, gt) -> torch.Tensor:
    """Mean Euclidean distance between corresponding landmarks (normalized units)."""
    if isinstance(pred, LandmarkSet) or isinstance(gt, LandmarkSet):
        if getattr(pred, "layout_id", None) != getattr(gt, "layout_id", None):
            raise LayoutError("landmark layouts differ")
        pred, gt = torch.as_tensor(pred.points), torch.as_tensor(gt.points)
    if pred.shape != gt.shape:
        raise LayoutError(f"landmark shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return torch.linalg.norm(pred - gt, dim=-1).mean()


def sample_flow(flow: torch.Tensor, lms: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample a (B, H, W, 2) flow at (B, N, 2) normalized positions."""
    grid = lms.unsqueeze(2).to(flow.dtype)
    out = F.grid_sample(flow.permute(0, 3, 1, 2), grid, mode="bilinear",
                        padding_mode="border", align_corners=False)
    return out.squeeze(-1).permute(0, 2, 1)


def registration_loss(lms_t: torch.Tensor, lms_t1: torch.Tensor, flow: torch.Tensor,
                      diagnostics: dict | None = None) -> torch.Tensor:
    """Mean pixel distance between flow-propagated frame-t landmarks and frame t+1.

    ``flow`` is a (B, H, W, 2) forward displacement in pixels from t to t+1.
    Landmarks outside the frame sample the clamped border; their count is
    written to ``diagnostics['n_outside']`` when a dict is given.
    """
    if lms_t.shape != lms_t1.shape:
        raise LayoutError("landmark shapes differ between frames")
    if flow.dim() != 4 or flow.shape[-1] != 2 or flow.shape[0] != lms_t.shape[0]:
        raise DimensionError(f"flow must be (B, H, W, 2), got {tuple(flow.shape)}")
    h, w = flow.shape[1:3]
    outside = (lms_t.detach().abs() > 1.0).any(dim=-1)
    n_out = int(outside.sum())
    if n_out:
        log.debug("registration_loss: %d landmarks outside the frame", n_out)
    if diagnostics is not None:
        diagnostics["n_outside"] = n_out
    moved = landmarks_to_pixels(lms_t, h, w) + sample_flow(flow, lms_t)
    target = landmarks_to_pixels(lms_t1, h, w)
    return torch.linalg.norm(moved - target, dim=-1).mean()


# --------------------------------------------------------------------------
# toy detector


def _conv(cin, cout):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.LeakyReLU(0.2))


class ToyDetector(nn.Module):
    """Small encoder-decoder emitting one heatmap per landmark at half resolution."""

    def __init__(self, image_size: int = 64, n_points: int = 74, width: int = 32):
        super().__init__()
        self.image_size = image_size
        self.n_points = n_points
        self.width = width
        c = width
        # a single conv at full resolution keeps the step cost down
        self.enc1 = _conv(3, c)
        self.enc2 = nn.Sequential(_conv(c, 2 * c), _conv(2 * c, 2 * c))
        self.enc3 = nn.Sequential(_conv(2 * c, 2 * c), _conv(2 * c, 2 * c))
        self.enc4 = _conv(2 * c, 2 * c)
        self.dec3 = _conv(4 * c, 2 * c)
        self.dec2 = _conv(4 * c, 2 * c)
        self.head = nn.Conv2d(2 * c, n_points, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[-1] != self.image_size or x.shape[-2] != self.image_size:
            raise DimensionError(
                f"detector expects (B, 3, {self.image_size}, {self.image_size}), got {tuple(x.shape)}")
        e1 = self.enc1(x)
        e2 = self.enc2(F.avg_pool2d(e1, 2))
        e3 = self.enc3(F.avg_pool2d(e2, 2))
        e4 = self.enc4(F.avg_pool2d(e3, 2))
        d3 = self.dec3(torch.cat([F.interpolate(e4, scale_factor=2.0), e3], 1))
        d2 = self.dec2(torch.cat([F.interpolate(d3, scale_factor=2.0), e2], 1))
        return self.head(d2)

    def predict(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 3, S, S) frames -> (B, N, 2) normalized landmarks."""
        return dsnt(self(x))


def detect_toy(frame, head: ToyDetector) -> LandmarkSet:
    """Detect 74 landmarks on one (3, S, S) or (1, 3, S, S) frame."""
    x = frame if torch.is_tensor(frame) else torch.as_tensor(np.asarray(frame))
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.shape[0] != 1:
        raise DimensionError("detect_toy takes a single frame")
    param = next(head.parameters())
    with torch.no_grad():
        pts = head.predict(x.to(param.dtype))[0]
    return LandmarkSet(pts.double().numpy(), "74" if head.n_points == 74 else str(head.n_points))


@dataclass
class DetectorConfig:
    image_size: int = 64
    width: int = 32
    steps: int = 2500
    finetune_steps: int = 300
    batch_size: int = 16
    clip_batch: int = 6
    lr: float = 1e-3
    finetune_lr: float = 5e-5
    registration_weight: float = 1.0
    heatmap_sigma: float = 1.0
    heatmap_weight: float = 1.0
    seed: int = 0


def heatmap_target_loss(hm: torch.Tensor, gt: torch.Tensor, sigma: float) -> torch.Tensor:
    """Squared error between predicted probability maps and normalized Gaussians."""
    h, w = hm.shape[-2:]
    target = render_heatmap(gt.to(hm.dtype), h, w, sigma)
    target = target / target.sum(dim=(-2, -1), keepdim=True)
    prob = heatmap_probabilities(hm)
    return ((prob - target) ** 2).sum(dim=(-2, -1)).mean() * (h * w)


def train_detector(frames: torch.Tensor, landmarks: torch.Tensor, cfg: DetectorConfig,
                   detector: ToyDetector | None = None, log_every: int = 0) -> ToyDetector:
    """Stage one: single-frame supervised training on (M, 3, S, S) frames."""
    gen = torch.Generator().manual_seed(cfg.seed)
    if detector is None:
        torch.manual_seed(cfg.seed)
        detector = ToyDetector(cfg.image_size, landmarks.shape[1], cfg.width)
    opt = torch.optim.Adam(detector.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, max(cfg.steps, 1))
    n = frames.shape[0]
    for step in range(cfg.steps):
        idx = torch.randint(0, n, (cfg.batch_size,), generator=gen)
        hm = detector(frames[idx])
        loss = regression_loss(dsnt(hm), landmarks[idx])
        if cfg.heatmap_weight > 0:
            loss = loss + cfg.heatmap_weight * heatmap_target_loss(hm, landmarks[idx], cfg.heatmap_sigma)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if log_every and step % log_every == 0:
            log.info("detector step %d loss %.5f", step, loss.item())
    return detector


def finetune_detector(detector: ToyDetector, clips: torch.Tensor, clip_landmarks: torch.Tensor,
                      clip_flows: torch.Tensor, cfg: DetectorConfig,
                      registration_weight: float | None = None) -> ToyDetector:
    """Stage two: regression plus registration loss on short clips.

    ``clips`` is (M, T, 3, S, S), ``clip_landmarks`` (M, T, N, 2) and
    ``clip_flows`` (M, T-1, S, S, 2) forward flow in pixels.  With a zero
    registration weight this is plain regression fine-tuning.
    """
    lam = cfg.registration_weight if registration_weight is None else registration_weight
    gen = torch.Generator().manual_seed(cfg.seed + 7919)
    opt = torch.optim.Adam(detector.parameters(), lr=cfg.finetune_lr)
    m, t = clips.shape[:2]
    for _ in range(cfg.finetune_steps):
        idx = torch.randint(0, m, (cfg.clip_batch,), generator=gen)
        x = clips[idx].flatten(0, 1)
        hm = detector(x)
        pred = dsnt(hm).reshape(cfg.clip_batch, t, -1, 2)
        gt = clip_landmarks[idx]
        loss = regression_loss(pred, gt)
        if cfg.heatmap_weight > 0:
            loss = loss + cfg.heatmap_weight * heatmap_target_loss(hm, gt.flatten(0, 1), cfg.heatmap_sigma)
        if lam > 0:
            flows = clip_flows[idx]
            reg = sum(registration_loss(pred[:, k], pred[:, k + 1], flows[:, k])
                      for k in range(t - 1)) / (t - 1)
            # registration is in pixels, regression in normalized units
            loss = loss + lam * reg * (2.0 / cfg.image_size)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return detector


def save_detector(path, detector: ToyDetector, cfg: DetectorConfig | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"format": "facemotion-detector", "image_size": detector.image_size,
                "n_points": detector.n_points, "width": detector.width,
                "config": asdict(cfg) if cfg is not None else None,
                "state": detector.state_dict()}, path)


def load_detector(path) -> ToyDetector:
    try:
        state = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError) as exc:
        raise DataError(f"cannot read detector {path}: {exc}") from None
    if not isinstance(state, dict) or state.get("format") != "facemotion-detector":
        raise DataError(f"{path} is not a detector checkpoint")
    det = ToyDetector(state["image_size"], state["n_points"], state["width"])
    det.load_state_dict(state["state"])
    det.eval()
    return det


# --------------------------------------------------------------------------
# landmark text files


def write_landmarks_file(path, frames: Sequence, layout_id: str = "74") -> None:
    """One line per frame: index followed by x y pairs in normalized coords."""
    n = LAYOUT_SIZES[layout_id]
    lines = [f"# layout {layout_id}"]
    for k, pts in enumerate(frames):
        pts = pts.points if isinstance(pts, LandmarkSet) else np.asarray(pts, dtype=np.float64)
        if pts.shape != (n, 2):
            raise LayoutError(f"frame {k}: expected ({n}, 2) landmarks, got {pts.shape}")
        lines.append(" ".join([str(k)] + [repr(float(v)) for v in pts.reshape(-1)]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_landmarks_file(path, layout_id: str = "74") -> list[LandmarkSet]:
    n = LAYOUT_SIZES[layout_id]
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "layout" and parts[1] != layout_id:
                raise LayoutError(f"{path}:{lineno}: file layout {parts[1]} != {layout_id}")
            continue
        fields = line.split()
        if len(fields) != 1 + 2 * n:
            raise DataError(
                f"{path}:{lineno}: expected frame index and {n} points "
                f"({1 + 2 * n} fields), got {len(fields)} fields")
        try:
            idx = int(fields[0])
            vals = np.array([float(v) for v in fields[1:]])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if idx != len(out):
            raise DataError(f"{path}:{lineno}: frame index {idx}, expected {len(out)}")
        if not np.isfinite(vals).all():
            raise DataError(f"{path}:{lineno}: non-finite coordinate")
        out.append(LandmarkSet(vals.reshape(n, 2), layout_id))
    return out
