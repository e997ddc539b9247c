"""Procedural face videos with exact landmarks, parsing maps and optical flow.

Faces are drawn in a canonical frame (normalized image units at scale 1, y
pointing down) and placed in the image by a similarity transform
``p = center + scale * R(rotation) @ c``.  Because every pixel is evaluated
through that transform, landmarks and flow follow analytically from the
parameters.  Frames are quantized to 8 bits so they survive PNG round trips.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import DataError, ParameterError
from .landmarks import LandmarkSet, read_landmarks_file, write_landmarks_file
from .warpfield import norm_to_pixel, pixel_to_norm

BACKGROUND, SKIN, BROW, EYE, PUPIL, MOUTH = range(6)
PALETTE = (BACKGROUND, SKIN, BROW, EYE, PUPIL, MOUTH)

HEAD_AXES = (0.60, 0.76)
BROW_Y, BROW_AXES = -0.34, (0.15, 0.035)
EYE_X, EYE_Y, EYE_A, EYE_B = 0.32, -0.14, 0.14, 0.085
PUPIL_R = 0.05
NOSE_BRIDGE = (0.0, -0.02, 0.03, 0.15)
NOSE_BASE = (0.0, 0.13, 0.09, 0.035)
MOUTH_Y, MOUTH_A, INNER_A = 0.40, 0.22, 0.15


@dataclass(frozen=True)
class FaceParams:
    """Pose and expression of one synthetic face.

    Ranges: center in [-0.5, 0.5]^2 (normalized), rotation in [-pi, pi],
    scale in [0.5, 1.5], gaze in [-1, 1]^2 (fraction of the pupil travel),
    eye/mouth openness in [0, 1], hue_seed a nonnegative int.
    """

    cx: float = 0.0
    cy: float = 0.0
    rotation: float = 0.0
    scale: float = 1.0
    gaze_x: float = 0.0
    gaze_y: float = 0.0
    eye_open: float = 1.0
    mouth_open: float = 0.2
    hue_seed: int = 0

    def validate(self) -> "FaceParams":
        checks = [
            ("cx", self.cx, -0.5, 0.5), ("cy", self.cy, -0.5, 0.5),
            ("rotation", self.rotation, -math.pi, math.pi), ("scale", self.scale, 0.5, 1.5),
            ("gaze_x", self.gaze_x, -1.0, 1.0), ("gaze_y", self.gaze_y, -1.0, 1.0),
            ("eye_open", self.eye_open, 0.0, 1.0), ("mouth_open", self.mouth_open, 0.0, 1.0),
        ]
        for name, val, lo, hi in checks:
            if not (lo <= val <= hi) or not math.isfinite(val):
                raise ParameterError(f"{name}={val} outside [{lo}, {hi}]")
        if self.hue_seed < 0:
            raise ParameterError("hue_seed must be nonnegative")
        return self

    def clipped(self) -> "FaceParams":
        return dataclasses.replace(
            self,
            cx=float(np.clip(self.cx, -0.5, 0.5)), cy=float(np.clip(self.cy, -0.5, 0.5)),
            rotation=float(np.clip(self.rotation, -math.pi, math.pi)),
            scale=float(np.clip(self.scale, 0.5, 1.5)),
            gaze_x=float(np.clip(self.gaze_x, -1, 1)), gaze_y=float(np.clip(self.gaze_y, -1, 1)),
            eye_open=float(np.clip(self.eye_open, 0, 1)),
            mouth_open=float(np.clip(self.mouth_open, 0, 1)))


@dataclass
class SynthFrame:
    image: np.ndarray                 # (H, W, 3) float in [0, 1]
    landmarks: LandmarkSet
    parsing: np.ndarray               # (H, W) uint8 labels from PALETTE
    params: FaceParams | None = None
    flow_to_next: np.ndarray | None = None   # (H, W, 2) pixels
    foreground: np.ndarray | None = None     # (H, W) bool


# --------------------------------------------------------------------------
# geometry


def _eye_b(p: FaceParams) -> float:
    # openness 0 still leaves half the eye height so pupils stay visible
    return EYE_B * (0.5 + 0.5 * p.eye_open)


def _mouth_axes(p: FaceParams) -> tuple[float, float]:
    return 0.05 + 0.08 * p.mouth_open, 0.075 * p.mouth_open


def _pupil_centers(p: FaceParams) -> list[tuple[float, float]]:
    b = _eye_b(p)
    return [(sx * EYE_X + 0.07 * p.gaze_x, EYE_Y + 0.3 * b * p.gaze_y) for sx in (-1, 1)]


def canonical_landmarks(p: FaceParams) -> np.ndarray:
    """74 landmarks in canonical face coordinates."""
    pts = np.zeros((74, 2))
    a, b = HEAD_AXES
    theta = math.pi - np.arange(17) * math.pi / 16
    pts[0:17] = np.stack([a * np.cos(theta), b * np.sin(theta)], 1)
    offs = np.array([-0.12, -0.06, 0.0, 0.06, 0.12])
    for start, sx in ((17, -1), (22, 1)):
        pts[start:start + 5] = np.stack([sx * EYE_X + offs, np.full(5, BROW_Y)], 1)
    pts[27:31] = np.stack([np.zeros(4), np.array([-0.15, -0.07, 0.01, 0.09])], 1)
    pts[31:36] = np.array([[-0.07, 0.13], [-0.035, 0.145], [0.0, 0.15], [0.035, 0.145], [0.07, 0.13]])
    eb = _eye_b(p)
    phi = math.pi - np.arange(6) * math.pi / 3
    for start, sx in ((36, -1), (42, 1)):
        pts[start:start + 6] = np.stack([sx * EYE_X + EYE_A * np.cos(phi), EYE_Y - eb * np.sin(phi)], 1)
    ob, ib = _mouth_axes(p)
    phi = math.pi - np.arange(12) * math.pi / 6
    pts[48:60] = np.stack([MOUTH_A * np.cos(phi), MOUTH_Y - ob * np.sin(phi)], 1)
    phi = math.pi - np.arange(8) * math.pi / 4
    pts[60:68] = np.stack([INNER_A * np.cos(phi), MOUTH_Y - ib * np.sin(phi)], 1)
    pts[68], pts[69] = _pupil_centers(p)
    pts[70:74] = [[-EYE_X, EYE_Y - eb], [-EYE_X, EYE_Y + eb], [EYE_X, EYE_Y - eb], [EYE_X, EYE_Y + eb]]
    return pts


def to_image_coords(p: FaceParams, c: np.ndarray) -> np.ndarray:
    cs, sn = math.cos(p.rotation), math.sin(p.rotation)
    x, y = c[..., 0], c[..., 1]
    return np.stack([p.cx + p.scale * (cs * x - sn * y), p.cy + p.scale * (sn * x + cs * y)], -1)


def to_canonical(p: FaceParams, q: np.ndarray) -> np.ndarray:
    cs, sn = math.cos(p.rotation), math.sin(p.rotation)
    x, y = (q[..., 0] - p.cx) / p.scale, (q[..., 1] - p.cy) / p.scale
    return np.stack([cs * x + sn * y, -sn * x + cs * y], -1)


def face_landmarks(p: FaceParams) -> LandmarkSet:
    return LandmarkSet(to_image_coords(p, canonical_landmarks(p)), "74")


def _pixel_grid(size: int) -> np.ndarray:
    t = pixel_to_norm(np.arange(size, dtype=np.float64), size)
    gy, gx = np.meshgrid(t, t, indexing="ij")
    return np.stack([gx, gy], -1)


def _ellipse(c, cx, cy, a, b, px_per_unit):
    """(coverage, inside) for an axis-aligned ellipse in canonical coords."""
    if a <= 0 or b <= 0:
        zero = np.zeros(c.shape[:-1])
        return zero, zero.astype(bool)
    x = (c[..., 0] - cx) / a
    y = (c[..., 1] - cy) / b
    q = np.sqrt(x * x + y * y)
    grad = np.sqrt((x / a) ** 2 + (y / b) ** 2) / np.maximum(q, 1e-12)
    dist = (q - 1.0) / np.maximum(grad, 1e-12)
    # the gradient estimate is poor far from flat ellipses; the box distance bounds it
    dist = np.maximum(dist, np.maximum(np.abs(c[..., 0] - cx) - a, np.abs(c[..., 1] - cy) - b))
    return np.clip(0.5 - dist * px_per_unit, 0.0, 1.0), q < 1.0


def face_colors(hue_seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(hue_seed)
    skin = rng.uniform([0.62, 0.42, 0.30], [0.95, 0.75, 0.60])
    while True:
        bg = rng.uniform(0.05, 0.95, 3)
        if np.abs(bg - skin).sum() > 0.6:
            break
    return {
        "background": bg,
        "skin": skin,
        "nose": skin * 0.82,
        "brow": skin * 0.3,
        "eye": np.array([0.95, 0.95, 0.92]),
        "pupil": rng.uniform(0.05, 0.3, 3),
        "lips": np.array([0.78, 0.26, 0.30]) * rng.uniform(0.8, 1.1),
        "inner": np.array([0.25, 0.05, 0.08]),
    }


def _layers(p: FaceParams, c: np.ndarray, ppu: float):
    """Yield (name, coverage, inside, label) in painting order."""
    yield "skin", *_ellipse(c, 0.0, 0.0, *HEAD_AXES, ppu), SKIN
    yield "nose", *_ellipse(c, *NOSE_BRIDGE, ppu), SKIN
    yield "nose", *_ellipse(c, *NOSE_BASE, ppu), SKIN
    for sx in (-1, 1):
        yield "brow", *_ellipse(c, sx * EYE_X, BROW_Y, *BROW_AXES, ppu), BROW
    eb = _eye_b(p)
    for sx, (px, py) in zip((-1, 1), _pupil_centers(p)):
        eye_cov, eye_in = _ellipse(c, sx * EYE_X, EYE_Y, EYE_A, eb, ppu)
        yield "eye", eye_cov, eye_in, EYE
        pup_cov, pup_in = _ellipse(c, px, py, PUPIL_R, PUPIL_R, ppu)
        yield "pupil", pup_cov * eye_cov, pup_in & eye_in, PUPIL
    ob, ib = _mouth_axes(p)
    yield "lips", *_ellipse(c, 0.0, MOUTH_Y, MOUTH_A, ob, ppu), MOUTH
    yield "inner", *_ellipse(c, 0.0, MOUTH_Y, INNER_A, ib, ppu), MOUTH


def render(params: FaceParams, size: int, quantize: bool = True, noise: float = 0.0,
           noise_seed: int | None = None) -> SynthFrame:
    """Rasterize one face.  ``noise`` adds Gaussian pixel noise of that std."""
    if size < 32:
        raise ParameterError(f"render size must be >= 32, got {size}")
    params.validate()
    colors = face_colors(params.hue_seed)
    c = to_canonical(params, _pixel_grid(size))
    ppu = params.scale * size / 2.0
    img = np.broadcast_to(colors["background"], (size, size, 3)).copy()
    labels = np.zeros((size, size), dtype=np.uint8)
    fg = None
    for name, cov, inside, label in _layers(params, c, ppu):
        color = colors[name]
        if name == "skin":
            a, b = HEAD_AXES
            shade = 1.0 - 0.25 * ((c[..., 0] / a) ** 2 + (c[..., 1] / b) ** 2)
            shade += 0.05 * np.sin(9.0 * c[..., 0]) * np.cos(7.0 * c[..., 1])
            color = colors["skin"] * np.clip(shade, 0.5, 1.1)[..., None]
            fg = inside
        img = img * (1.0 - cov[..., None]) + color * cov[..., None]
        labels[inside] = label
    if noise > 0:
        rng = np.random.default_rng(noise_seed)
        img = img + rng.normal(0.0, noise, img.shape)
    img = np.clip(img, 0.0, 1.0)
    if quantize:
        img = np.round(img * 255.0) / 255.0
    return SynthFrame(img, face_landmarks(params), labels, params, None, fg)


def flow_between(p0: FaceParams, p1: FaceParams, size: int) -> np.ndarray:
    """Forward optical flow (pixels) of every frame-``p0`` pixel into frame ``p1``.

    Rigid motion everywhere on the head; pupils translate with the gaze,
    eyes and mouth stretch vertically with their openness.  Background is static.
    """
    q = _pixel_grid(size)
    c = to_canonical(p0, q)
    ppu = p0.scale * size / 2.0
    moved = c.copy()
    _, head_in = _ellipse(c, 0.0, 0.0, *HEAD_AXES, ppu)
    ob0, _ = _mouth_axes(p0)
    ob1, _ = _mouth_axes(p1)
    _, mouth_in = _ellipse(c, 0.0, MOUTH_Y, MOUTH_A, ob0, ppu)
    moved[mouth_in, 1] = MOUTH_Y + (c[mouth_in, 1] - MOUTH_Y) * (ob1 / ob0)
    eb0, eb1 = _eye_b(p0), _eye_b(p1)
    for sx, pc0, pc1 in zip((-1, 1), _pupil_centers(p0), _pupil_centers(p1)):
        _, eye_in = _ellipse(c, sx * EYE_X, EYE_Y, EYE_A, eb0, ppu)
        _, pup_in = _ellipse(c, pc0[0], pc0[1], PUPIL_R, PUPIL_R, ppu)
        lid = eye_in & ~pup_in
        moved[lid, 1] = EYE_Y + (c[lid, 1] - EYE_Y) * (eb1 / eb0)
        pup = eye_in & pup_in
        moved[pup] = c[pup] + np.subtract(pc1, pc0)
    q1 = to_image_coords(p1, moved)
    flow = (q1 - q) * (size / 2.0)
    flow[~head_in] = 0.0
    return flow


def flow_to_field(flow: np.ndarray | torch.Tensor) -> torch.Tensor:
    """Backward sampling field p + flow(p), as (1, H, W, 2) normalized coords."""
    flow = torch.as_tensor(flow, dtype=torch.float64)
    h, w = flow.shape[:2]
    xs = torch.arange(w, dtype=torch.float64)
    ys = torch.arange(h, dtype=torch.float64)[:, None]
    fx = pixel_to_norm(xs + flow[..., 0], w)
    fy = pixel_to_norm(ys + flow[..., 1], h)
    return torch.stack([fx, fy], -1).unsqueeze(0)


# --------------------------------------------------------------------------
# videos


Trajectory = Callable[[int], dict]


def make_video(start: FaceParams, trajectory: Trajectory, n: int, size: int = 64,
               noise: float = 0.0, noise_seed: int = 0) -> list[SynthFrame]:
    """Render ``n`` frames; ``trajectory(k)`` returns parameter offsets from ``start``.

    Every frame but the last carries the exact forward flow to its successor.
    """
    if n < 1:
        raise ParameterError("a video needs at least one frame")
    params = []
    for k in range(n):
        offs = trajectory(k)
        p = dataclasses.replace(start, **{key: getattr(start, key) + v for key, v in offs.items()})
        params.append(p.clipped())
    frames = [render(p, size, noise=noise, noise_seed=None if noise == 0 else noise_seed * 100003 + k)
              for k, p in enumerate(params)]
    for k in range(n - 1):
        frames[k].flow_to_next = flow_between(params[k], params[k + 1], size)
    return frames


def constant_trajectory(k: int) -> dict:
    return {}


def random_trajectory(rng: np.random.Generator, n: int, gaze_only: bool = False) -> Trajectory:
    """Smooth sinusoidal offsets for every pose/expression parameter."""
    spec = {
        "cx": 0.05, "cy": 0.05, "rotation": 0.1, "scale": 0.05,
        "gaze_x": 0.6, "gaze_y": 0.5, "eye_open": 0.5, "mouth_open": 0.5,
    }
    if gaze_only:
        spec = {"gaze_x": 0.8, "gaze_y": 0.4}
    waves = {key: (rng.uniform(0, amp), rng.uniform(0.5, 2.0), rng.uniform(0, 2 * math.pi))
             for key, amp in spec.items()}

    def traj(k: int) -> dict:
        return {key: amp * math.sin(2 * math.pi * f * k / max(n, 1) + ph)
                for key, (amp, f, ph) in waves.items()}

    return traj


def random_start(rng: np.random.Generator, hue_seed: int) -> FaceParams:
    return FaceParams(
        cx=rng.uniform(-0.06, 0.06), cy=rng.uniform(-0.06, 0.06),
        rotation=rng.uniform(-0.08, 0.08), scale=rng.uniform(0.95, 1.03),
        gaze_x=rng.uniform(-0.4, 0.4), gaze_y=rng.uniform(-0.3, 0.3),
        eye_open=rng.uniform(0.4, 1.0), mouth_open=rng.uniform(0.0, 0.5),
        hue_seed=hue_seed)


@dataclass
class Video:
    frames: list[SynthFrame]
    seed: int | None = None
    name: str = ""

    def __len__(self):
        return len(self.frames)


def synth_video(seed: int, n_frames: int = 30, size: int = 64, gaze_only: bool = False,
                noise: float = 0.0) -> Video:
    rng = np.random.default_rng(seed)
    start = random_start(rng, hue_seed=int(rng.integers(0, 2**31)))
    traj = random_trajectory(rng, n_frames, gaze_only)
    return Video(make_video(start, traj, n_frames, size, noise, noise_seed=seed), seed)


def gaze_sweep(seed: int, n_frames: int = 10, size: int = 64) -> Video:
    """Static head whose gaze sweeps horizontally from -0.9 to 0.9."""
    rng = np.random.default_rng(seed)
    start = dataclasses.replace(random_start(rng, hue_seed=int(rng.integers(0, 2**31))),
                                gaze_x=0.0, gaze_y=0.0)
    xs = np.linspace(-0.9, 0.9, n_frames)
    return Video(make_video(start, lambda k: {"gaze_x": float(xs[k])}, n_frames, size), seed)


class SynthDataset:
    """A list of videos with stacked tensors for fast batch sampling."""

    def __init__(self, videos: Sequence[Video], size: int):
        if not videos:
            raise DataError("dataset has no videos")
        self.videos = list(videos)
        self.size = size
        self._stack = None

    def __len__(self):
        return len(self.videos)

    @classmethod
    def generate(cls, n_videos: int, n_frames: int = 30, size: int = 64, seed: int = 0,
                 gaze_only: bool = False, noise: float = 0.0) -> "SynthDataset":
        seeds = video_seeds(seed, n_videos)
        return cls([synth_video(s, n_frames, size, gaze_only, noise) for s in seeds], size)

    def tensors(self):
        """Ragged-safe flat tensors: images (M,3,S,S), landmarks (M,74,2),
        parsing (M,S,S) and the (start, length) of each video."""
        if self._stack is None:
            frames = [f for v in self.videos for f in v.frames]
            imgs = torch.from_numpy(np.stack([f.image for f in frames])).permute(0, 3, 1, 2).float()
            lms = torch.from_numpy(np.stack([f.landmarks.points for f in frames])).float()
            pars = torch.from_numpy(np.stack([f.parsing for f in frames])).long()
            offsets, start = [], 0
            for v in self.videos:
                offsets.append((start, len(v)))
                start += len(v)
            self._stack = (imgs.contiguous(), lms, pars, offsets)
        return self._stack


def video_seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(child.generate_state(1)[0]) for child in ss.spawn(n)]


@dataclass
class TrainSample:
    source: SynthFrame
    driving: SynthFrame
    same_video: bool = True


def sample_pair_indices(dataset: SynthDataset, count: int, rng: np.random.Generator):
    """(video, source frame, driving frame) triples, uniform within a video."""
    if len(dataset) == 0:
        raise DataError("cannot sample pairs from an empty dataset")
    out = []
    for _ in range(count):
        v = int(rng.integers(len(dataset)))
        n = len(dataset.videos[v])
        out.append((v, int(rng.integers(n)), int(rng.integers(n))))
    return out


def sample_pairs(dataset: SynthDataset, count: int, rng_seed: int) -> list[TrainSample]:
    if not isinstance(dataset, SynthDataset):
        if not dataset:
            raise DataError("cannot sample pairs from an empty dataset")
        dataset = SynthDataset(dataset, dataset[0].frames[0].image.shape[0])
    rng = np.random.default_rng(rng_seed)
    return [TrainSample(dataset.videos[v].frames[s], dataset.videos[v].frames[d])
            for v, s, d in sample_pair_indices(dataset, count, rng)]


# --------------------------------------------------------------------------
# disk layout


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def export_video(video: Video, out_dir) -> Path:
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "parsing").mkdir(exist_ok=True)
    for k, f in enumerate(video.frames):
        Image.fromarray(_to_uint8(f.image)).save(out / "frames" / f"frame_{k:05d}.png")
        Image.fromarray(f.parsing.astype(np.uint8)).save(out / "parsing" / f"parse_{k:05d}.png")
    write_landmarks_file(out / "landmarks.txt", [f.landmarks for f in video.frames])
    return out


def export_dataset(dataset: SynthDataset, out_dir, seeds: Sequence[int] | None = None,
                   meta: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, v in enumerate(dataset.videos):
        name = v.name or f"video_{i:04d}"
        export_video(v, out / name)
        entries.append({"name": name, "seed": v.seed, "n_frames": len(v)})
    manifest = {"size": dataset.size, "videos": entries, **(meta or {})}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def resize_square(img: torch.Tensor, size: int) -> tuple[torch.Tensor, tuple[int, int, int]]:
    """Centre-crop a (C, H, W) image to a square and resize it bilinearly.

    Returns the image and the crop (x offset, y offset, side) in source pixels.
    """
    _, h, w = img.shape
    side = min(h, w)
    ox, oy = (w - side) // 2, (h - side) // 2
    crop = img[:, oy:oy + side, ox:ox + side]
    if side != size:
        crop = F.interpolate(crop[None].double(), size=(size, size), mode="bilinear",
                             align_corners=False, antialias=side > size)[0]
    return crop, (ox, oy, side)


def _sorted_images(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))


def ingest_video(frames_dir, landmarks_file, parsing_dir=None, size: int = 64) -> Video:
    """Load numbered frames plus a landmark file into a square ``size`` video."""
    frames_dir = Path(frames_dir)
    paths = _sorted_images(frames_dir)
    lms = read_landmarks_file(landmarks_file)
    if len(paths) != len(lms):
        raise DataError(f"{frames_dir}: {len(paths)} frames but {len(lms)} landmark records")
    par_paths = _sorted_images(Path(parsing_dir)) if parsing_dir is not None else None
    if par_paths is not None and len(par_paths) != len(paths):
        raise DataError(f"{parsing_dir}: {len(par_paths)} parsing maps for {len(paths)} frames")
    frames = []
    for k, path in enumerate(paths):
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
        h, w = arr.shape[:2]
        img, (ox, oy, side) = resize_square(torch.from_numpy(arr).permute(2, 0, 1), size)
        pix = lms[k].to_pixels(h, w) - np.array([ox, oy])
        pts = np.stack([pixel_to_norm(pix[:, 0], side), pixel_to_norm(pix[:, 1], side)], 1)
        parsing = np.zeros((size, size), dtype=np.uint8)
        if par_paths is not None:
            lab = np.asarray(Image.open(par_paths[k]))
            lab = lab[oy:oy + side, ox:ox + side]
            if side != size:
                # nearest resampling keeps labels valid
                idx = np.clip(np.floor(norm_to_pixel(pixel_to_norm(np.arange(size), size), side) + 0.5),
                              0, side - 1).astype(int)
                lab = lab[np.ix_(idx, idx)]
            parsing = lab.astype(np.uint8)
        frames.append(SynthFrame(img.permute(1, 2, 0).numpy().astype(np.float64),
                                 LandmarkSet(pts, "74"), parsing))
    return Video(frames, None, frames_dir.parent.name)


def load_dataset(root, size: int | None = None) -> SynthDataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{root}: no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    size = size or manifest["size"]
    videos = []
    for entry in manifest["videos"]:
        vdir = root / entry["name"]
        par = vdir / "parsing"
        v = ingest_video(vdir / "frames", vdir / "landmarks.txt", par if par.exists() else None, size)
        v.seed, v.name = entry.get("seed"), entry["name"]
        videos.append(v)
    return SynthDataset(videos, size)
