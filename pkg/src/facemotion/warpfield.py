"""Motion fields, warping and global/local field blending.

Tensor conventions used throughout the package:

* images: ``(B, C, H, W)`` float, values in [0, 1]
* motion fields: ``(B, H, W, 2)`` float, last axis is (x, y)
* masks: ``(B, 1, H, W)`` float in [0, 1]
* parsing maps: ``(B, H, W)`` integer labels

A motion field is a backward map: ``field[b, i, j]`` is the normalized source
coordinate sampled to produce output pixel (row i, column j).  Pixel index
``k`` along an axis of length ``n`` sits at ``(2k + 1) / n - 1``, so the pixel
grid is symmetric in [-1, 1] and resolution independent.  This is the
``align_corners=False`` convention of ``torch.nn.functional.grid_sample``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, DimensionError, RegionError

FIELD_CONVENTION = "backward-center"
_FIELD_MAGIC = b"FMFIELD\x00"


def pixel_to_norm(pix, n):
    return (2.0 * pix + 1.0) / n - 1.0


def norm_to_pixel(coord, n):
    return ((coord + 1.0) * n - 1.0) / 2.0


def identity_field(h: int, w: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Identity backward field of shape (1, h, w, 2)."""
    xs = pixel_to_norm(torch.arange(w, dtype=dtype, device=device), w)
    ys = pixel_to_norm(torch.arange(h, dtype=dtype, device=device), h)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1).unsqueeze(0)


def _check_field(field: torch.Tensor, h: int, w: int, batch: int | None = None):
    if field.dim() != 4 or field.shape[-1] != 2:
        raise DimensionError(f"motion field must be (B, H, W, 2), got {tuple(field.shape)}")
    if field.shape[1] != h or field.shape[2] != w:
        raise DimensionError(
            f"field is {field.shape[1]}x{field.shape[2]} but image is {h}x{w}")
    if batch is not None and field.shape[0] not in (1, batch):
        raise DimensionError(f"field batch {field.shape[0]} vs image batch {batch}")


def _snap(pix: torch.Tensor, n: int) -> torch.Tensor:
    # coordinates within rounding error of a pixel centre are moved onto it,
    # so identity fields reproduce the input bit for bit; gradient passes through
    tol = 16 * torch.finfo(pix.dtype).eps * max(n, 1)
    r = torch.round(pix)
    near = (pix - r).abs() <= tol
    return torch.where(near, pix + (r - pix).detach(), pix)


def warp_bilinear(img: torch.Tensor, field: torch.Tensor) -> torch.Tensor:
    """Bilinear backward warp with clamp-to-edge borders.

    Same sampling as ``grid_sample(..., padding_mode="border",
    align_corners=False)``, differentiable in both the image and the field.
    """
    if img.dim() != 4:
        raise DimensionError(f"image must be (B, C, H, W), got {tuple(img.shape)}")
    b, c, h, w = img.shape
    _check_field(field, h, w, b)
    field = field.to(img.dtype).expand(b, -1, -1, -1)
    x = _snap(norm_to_pixel(field[..., 0], w), w).clamp(0, w - 1)
    y = _snap(norm_to_pixel(field[..., 1], h), h).clamp(0, h - 1)
    x0 = x.detach().floor().clamp_(0, w - 1)
    y0 = y.detach().floor().clamp_(0, h - 1)
    ax, ay = (x - x0).unsqueeze(1), (y - y0).unsqueeze(1)
    x0, y0 = x0.long(), y0.long()
    x1, y1 = (x0 + 1).clamp_(max=w - 1), (y0 + 1).clamp_(max=h - 1)
    flat = img.reshape(b, c, h * w)

    def tap(yy, xx):
        idx = (yy * w + xx).reshape(b, 1, h * w).expand(b, c, h * w)
        return torch.gather(flat, 2, idx).reshape(b, c, h, w)

    top = tap(y0, x0) * (1 - ax) + tap(y0, x1) * ax
    bottom = tap(y1, x0) * (1 - ax) + tap(y1, x1) * ax
    return top * (1 - ay) + bottom * ay


def warp_nearest(labels: torch.Tensor, field: torch.Tensor) -> torch.Tensor:
    """Nearest-neighbour backward warp of an integer label map.

    Rounds half up (``floor(u + 0.5)``) and clamps to the image border.
    Not differentiable.
    """
    if labels.dim() != 3:
        raise DimensionError(f"parsing map must be (B, H, W), got {tuple(labels.shape)}")
    b, h, w = labels.shape
    _check_field(field, h, w, b)
    field = field.detach().expand(b, -1, -1, -1)
    u = torch.floor(norm_to_pixel(field[..., 0].double(), w) + 0.5).long().clamp_(0, w - 1)
    v = torch.floor(norm_to_pixel(field[..., 1].double(), h) + 0.5).long().clamp_(0, h - 1)
    flat = labels.reshape(b, h * w)
    idx = (v * w + u).reshape(b, h * w)
    return torch.gather(flat, 1, idx).reshape(b, h, w)


@dataclass(frozen=True)
class RegionSpec:
    """Square patch of a ``height x width`` image.

    ``x0``/``y0`` give the top-left pixel.  The affine maps patch-normalized
    coordinates to image-normalized coordinates (the patch is cropped at native
    resolution, so the map is a pure scale + shift per axis).
    """

    x0: int
    y0: int
    size: int
    height: int
    width: int

    def __post_init__(self):
        if self.size < 1:
            raise RegionError("region size must be positive")
        if (self.x0 < 0 or self.y0 < 0 or self.x0 + self.size > self.width
                or self.y0 + self.size > self.height):
            raise RegionError(
                f"region x0={self.x0} y0={self.y0} size={self.size} outside "
                f"{self.height}x{self.width} image")

    @classmethod
    def around(cls, center: Sequence[float], size: int, height: int, width: int,
               clamp: bool = True) -> "RegionSpec":
        """Region of side ``size`` centred on pixel coords ``center`` (x, y)."""
        if size > height or size > width:
            raise RegionError(f"patch of {size} does not fit a {height}x{width} image")
        x0 = int(np.floor(float(center[0]) - (size - 1) / 2.0 + 0.5))
        y0 = int(np.floor(float(center[1]) - (size - 1) / 2.0 + 0.5))
        if clamp:
            x0 = min(max(x0, 0), width - size)
            y0 = min(max(y0, 0), height - size)
        return cls(x0, y0, size, height, width)

    @property
    def center(self) -> tuple[float, float]:
        half = (self.size - 1) / 2.0
        return (self.x0 + half, self.y0 + half)

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y0 + self.size), slice(self.x0, self.x0 + self.size)

    @property
    def affine(self) -> np.ndarray:
        """3x3 homogeneous map from patch-normalized to image-normalized coords."""
        s = self.size
        return np.array([
            [s / self.width, 0.0, (2.0 * self.x0 + s) / self.width - 1.0],
            [0.0, s / self.height, (2.0 * self.y0 + s) / self.height - 1.0],
            [0.0, 0.0, 1.0],
        ])

    @property
    def inverse_affine(self) -> np.ndarray:
        s = self.size
        return np.array([
            [self.width / s, 0.0, (self.width - 2.0 * self.x0 - s) / s],
            [0.0, self.height / s, (self.height - 2.0 * self.y0 - s) / s],
            [0.0, 0.0, 1.0],
        ])

    def to_global(self, coords: torch.Tensor) -> torch.Tensor:
        """Patch-normalized (..., 2) coords to image-normalized coords."""
        a = self.affine
        scale = coords.new_tensor([a[0, 0], a[1, 1]])
        shift = coords.new_tensor([a[0, 2], a[1, 2]])
        return coords * scale + shift

    def to_local(self, coords: torch.Tensor) -> torch.Tensor:
        a = self.inverse_affine
        scale = coords.new_tensor([a[0, 0], a[1, 1]])
        shift = coords.new_tensor([a[0, 2], a[1, 2]])
        return coords * scale + shift

    def overlaps(self, other: "RegionSpec") -> bool:
        return (self.x0 < other.x0 + other.size and other.x0 < self.x0 + self.size
                and self.y0 < other.y0 + other.size and other.y0 < self.y0 + self.size)


def _as_region_list(regions, batch: int) -> list[RegionSpec]:
    if isinstance(regions, RegionSpec):
        return [regions] * batch
    regions = list(regions)
    if len(regions) != batch:
        raise DimensionError(f"{len(regions)} regions for a batch of {batch}")
    return regions


def lift_local_field(local: torch.Tensor, mask: torch.Tensor, region: RegionSpec,
                     global_hw: tuple[int, int]) -> tuple[torch.Tensor, torch.Tensor]:
    """Express a patch field in image coordinates on the full image grid.

    Returns a full-size field and mask.  Inside the region footprint the field
    holds the patch field mapped through ``region.affine``; outside it holds
    the identity and the mask is 0, so the pair is inert there.
    """
    h, w = global_hw
    if (region.height, region.width) != (h, w):
        raise RegionError(f"region is defined on {region.height}x{region.width}, not {h}x{w}")
    s = region.size
    if local.dim() != 4 or local.shape[1:] != (s, s, 2):
        raise DimensionError(f"local field must be (B, {s}, {s}, 2), got {tuple(local.shape)}")
    if mask.dim() != 4 or mask.shape[1:] != (1, s, s):
        raise DimensionError(f"local mask must be (B, 1, {s}, {s}), got {tuple(mask.shape)}")
    b = local.shape[0]
    lifted = region.to_global(local)
    full = identity_field(h, w, local.dtype, local.device).expand(b, -1, -1, -1).clone()
    rows, cols = region.slices
    full[:, rows, cols] = lifted
    left, top = region.x0, region.y0
    full_mask = F.pad(mask, (left, w - left - s, top, h - top - s))
    return full, full_mask


def combine_fields(global_field: torch.Tensor, locals_) -> torch.Tensor:
    """Blend a global field with masked local fields inside their regions.

    ``locals_`` is a sequence of ``(local_field, mask, regions)`` where
    ``local_field`` is ``(B, s, s, 2)`` in patch coordinates, ``mask`` is
    ``(B, 1, s, s)`` and ``regions`` is one RegionSpec or one per batch item.
    Regions of the same batch item must not overlap.
    """
    b, h, w, _ = global_field.shape
    entries = [(f, m, _as_region_list(r, b)) for f, m, r in locals_]
    for i in range(b):
        regs = [e[2][i] for e in entries]
        for p in range(len(regs)):
            for q in range(p + 1, len(regs)):
                if regs[p].overlaps(regs[q]):
                    raise ConfigError(f"local regions {p} and {q} overlap (batch item {i})")
    out = global_field.clone()
    for local, mask, regs in entries:
        if local.shape[0] != b or mask.shape[0] != b:
            raise DimensionError("local field/mask batch does not match the global field")
        for i, region in enumerate(regs):
            if (region.height, region.width) != (h, w):
                raise RegionError("region defined on a different image size")
            rows, cols = region.slices
            m = mask[i, 0].unsqueeze(-1)
            lifted = region.to_global(local[i])
            out[i, rows, cols] = global_field[i, rows, cols] * (1.0 - m) + lifted * m
    return out


def field_to_displacement(field: torch.Tensor) -> torch.Tensor:
    """Field minus the identity, as a (B, 2, H, W) channel tensor."""
    _, h, w, _ = field.shape
    return (field - identity_field(h, w, field.dtype, field.device)).permute(0, 3, 1, 2)


def save_field(path, field) -> None:
    """Write one (H, W, 2) field: magic, header (version, H, W, tag), float32 data."""
    arr = np.asarray(field.detach().cpu() if torch.is_tensor(field) else field,
                     dtype="<f4")
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise DimensionError(f"expected an (H, W, 2) field, got {arr.shape}")
    tag = FIELD_CONVENTION.encode("ascii").ljust(16, b"\x00")
    with open(path, "wb") as fh:
        fh.write(_FIELD_MAGIC)
        fh.write(struct.pack("<III", 1, arr.shape[0], arr.shape[1]))
        fh.write(tag)
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_field(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != _FIELD_MAGIC:
        raise ValueError(f"{path}: not a motion field file")
    version, h, w = struct.unpack("<III", data[8:20])
    tag = data[20:36].rstrip(b"\x00").decode("ascii")
    if version != 1 or tag != FIELD_CONVENTION:
        raise ValueError(f"{path}: unsupported field version {version} / convention {tag!r}")
    arr = np.frombuffer(data[36:], dtype="<f4")
    if arr.size != h * w * 2:
        raise ValueError(f"{path}: truncated field data")
    return arr.reshape(h, w, 2).copy()


@dataclass(frozen=True)
class ParsingMap:
    """Integer label map (B, H, W) with its palette of valid labels."""

    labels: torch.Tensor
    palette: tuple[int, ...]

    def __post_init__(self):
        if self.labels.dtype.is_floating_point:
            raise DimensionError("parsing labels must be integers")
        present = set(torch.unique(self.labels).tolist())
        if not present <= set(self.palette):
            raise ConfigError(f"labels {sorted(present - set(self.palette))} not in palette")
