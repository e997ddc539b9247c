"""Image and landmark quality metrics.

Image metrics take numpy arrays laid out (H, W, C) or (H, W), or torch
tensors laid out (C, H, W) / (1, C, H, W); values are on the [0, 1] range.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
from scipy import linalg
from scipy.ndimage import correlate1d

from .errors import DimensionError, ParameterError
from .landmarks import LandmarkSet

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def as_hwc(x) -> np.ndarray:
    if torch.is_tensor(x):
        x = x.detach().cpu().double()
        if x.dim() == 4:
            if x.shape[0] != 1:
                raise DimensionError("metrics take one image at a time")
            x = x[0]
        if x.dim() == 3:
            x = x.permute(1, 2, 0)
        x = x.numpy()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    if x.ndim != 3:
        raise DimensionError(f"expected an image, got shape {x.shape}")
    return x


def _pair(a, b):
    a, b = as_hwc(a), as_hwc(b)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def metric_l1(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.abs(a - b).mean())


def metric_psnr(a, b) -> float:
    """10 log10(1 / MSE) in dB; ``inf`` for identical images."""
    a, b = _pair(a, b)
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-t ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    r = len(win) // 2
    y = correlate1d(x, win, axis=0, mode="constant")
    y = correlate1d(y, win, axis=1, mode="constant")
    return y[r:x.shape[0] - r, r:x.shape[1] - r]


def _ssim_components(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Mean SSIM and mean contrast-structure term, averaged over channels."""
    win = gaussian_window()
    if min(a.shape[:2]) < len(win):
        raise ParameterError(f"SSIM needs images of at least {len(win)} pixels per side")
    ssim_vals, cs_vals = [], []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, win), _filter_valid(y, win)
        sxx = _filter_valid(x * x, win) - mx * mx
        syy = _filter_valid(y * y, win) - my * my
        sxy = _filter_valid(x * y, win) - mx * my
        cs = (2 * sxy + C2) / (sxx + syy + C2)
        lum = (2 * mx * my + C1) / (mx * mx + my * my + C1)
        ssim_vals.append((lum * cs).mean())
        cs_vals.append(cs.mean())
    return float(np.mean(ssim_vals)), float(np.mean(cs_vals))


def metric_ssim(a, b) -> float:
    """SSIM with an 11x11 Gaussian window (sigma 1.5), valid positions only."""
    a, b = _pair(a, b)
    return _ssim_components(a, b)[0]


def _halve(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def metric_msssim(a, b, scales: int = 5) -> float:
    """Multi-scale SSIM; fewer than 5 scales renormalizes the leading weights.

    Negative per-scale terms are clipped to 0 before exponentiation.
    """
    a, b = _pair(a, b)
    if not 1 <= scales <= len(MSSSIM_WEIGHTS):
        raise ParameterError(f"scales must be in 1..{len(MSSSIM_WEIGHTS)}")
    need = 2 ** (scales - 1) * SSIM_WINDOW
    if min(a.shape[:2]) < need:
        raise ParameterError(
            f"{scales}-scale MS-SSIM needs images of at least {need} pixels, got {a.shape[:2]}")
    weights = np.array(MSSSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    out = 1.0
    for i in range(scales):
        ssim, cs = _ssim_components(a, b)
        if i == scales - 1:
            out *= max(ssim, 0.0) ** weights[i]
        else:
            out *= max(cs, 0.0) ** weights[i]
            a, b = _halve(a), _halve(b)
    return float(out)


def max_msssim_scales(h: int, w: int) -> int:
    n = 0
    while n < len(MSSSIM_WEIGHTS) and min(h, w) >= 2 ** n * SSIM_WINDOW:
        n += 1
    return n


def _points(lms) -> np.ndarray:
    if isinstance(lms, LandmarkSet):
        return lms.points
    if torch.is_tensor(lms):
        return lms.detach().cpu().double().numpy()
    return np.asarray(lms, dtype=np.float64)


def akd_per_frame(gen_frames: Sequence, gt_frames: Sequence, extractor: Callable,
                  size: int) -> list[float | None]:
    """Mean landmark distance in pixels per frame; ``None`` where the extractor failed."""
    if len(gen_frames) != len(gt_frames):
        raise DimensionError(f"{len(gen_frames)} generated vs {len(gt_frames)} ground-truth frames")
    out = []
    for g, t in zip(gen_frames, gt_frames):
        try:
            pg, pt = _points(extractor(g)), _points(extractor(t))
        except Exception:
            out.append(None)
            continue
        if pg is None or pt is None or pg.shape != pt.shape or not np.isfinite(pg).all():
            out.append(None)
            continue
        out.append(float(np.linalg.norm(pg - pt, axis=-1).mean() * size / 2.0))
    return out


def metric_akd(gen_frames, gt_frames, extractor: Callable, size: int) -> float:
    """Average keypoint distance in pixels over frames where extraction succeeded."""
    vals = [v for v in akd_per_frame(gen_frames, gt_frames, extractor, size) if v is not None]
    return float(np.mean(vals)) if vals else math.nan


def metric_sms(traj, size: int | None = None) -> float:
    """Mean |midpoint of neighbours - current| over interior frames and all coordinates.

    With ``size`` the normalized coordinates are first converted to pixels.
    """
    arr = np.stack([_points(t) for t in traj]) if not isinstance(traj, np.ndarray) else traj
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape[0] < 3:
        raise ParameterError("SMS needs at least three frames")
    if size is not None:
        arr = arr * (size / 2.0)
    dev = np.abs(0.5 * (arr[:-2] + arr[2:]) - arr[1:-1])
    return float(dev.mean())


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Frechet distance between Gaussians fitted to two (n, d) feature sets."""
    mu_a, mu_b = feats_a.mean(0), feats_b.mean(0)
    cov_a = np.cov(feats_a, rowvar=False)
    cov_b = np.cov(feats_b, rowvar=False)
    covmean = linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    return float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a + cov_b - 2 * covmean))


@dataclass
class MetricReport:
    per_frame: dict[str, list] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)
    scalars: dict[str, float] = field(default_factory=dict)

    def add(self, name: str, value) -> None:
        self.per_frame.setdefault(name, []).append(value)

    @property
    def n_frames(self) -> int:
        return max((len(v) for v in self.per_frame.values()), default=0)

    def means(self) -> dict[str, float]:
        out = {}
        for name, vals in self.per_frame.items():
            good = [v for v in vals if v is not None]
            out[name] = float(np.mean(good)) if good else math.nan
        out.update(self.scalars)
        return out

    def to_text(self) -> str:
        """JSON lines: one record per frame, then a summary record."""
        lines = []
        for k in range(self.n_frames):
            rec = {"frame": k}
            for name, vals in self.per_frame.items():
                rec[name] = vals[k] if k < len(vals) else None
            lines.append(json.dumps(rec))
        lines.append(json.dumps({"summary": self.means(), "skipped": self.skipped,
                                 "n_frames": self.n_frames, **self.metadata}))
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        rows = [f"{'metric':<10} {'mean':>12}"]
        for name, val in self.means().items():
            rows.append(f"{name:<10} {val:>12.6f}")
        return "\n".join(rows)
