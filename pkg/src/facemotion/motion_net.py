"""Dense motion network driven by sparse landmark vectors.

Landmarks reach the network only through two conditioning layers: AdaIN
(per-channel scale/bias predicted from a landmark vector) and Add_Motion (a
bias-free projection of the driving-minus-source landmark difference added to
the bottleneck).  Encoder AdaIN sites read the source landmarks, decoder sites
the driving landmarks.

A global branch sees the whole frame; three small branches see patches around
the two eyes and the mouth and additionally predict blending masks.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DegenerateError, DimensionError, RegionError
from .landmarks import Layout74, landmarks_to_pixels
from .warpfield import RegionSpec, combine_fields, identity_field

EPS = 1e-5


def adain(feat: torch.Tensor, lm_vec: torch.Tensor, weight: torch.Tensor,
          bias: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Adaptive instance norm with (scale, bias) = split(weight @ lm_vec + bias).

    feat: (B, C, h, w); lm_vec: (B, D); weight: (2C, D); bias: (2C,).
    """
    if feat.dim() != 4:
        raise DimensionError(f"feature map must be (B, C, h, w), got {tuple(feat.shape)}")
    c = feat.shape[1]
    if weight.shape[0] != 2 * c or bias.shape[0] != 2 * c:
        raise DimensionError(f"AdaIN params sized for {weight.shape[0] // 2} channels, feature has {c}")
    if lm_vec.shape[-1] != weight.shape[1]:
        raise DimensionError(f"landmark vector has {lm_vec.shape[-1]} entries, expected {weight.shape[1]}")
    if feat.shape[2] * feat.shape[3] < 2:
        raise DegenerateError("instance statistics need at least two spatial positions")
    style = F.linear(lm_vec, weight, bias)
    scale, shift = style[:, :c, None, None], style[:, c:, None, None]
    return scale * instance_norm(feat, eps) + shift


def instance_norm(feat: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    mu = feat.mean(dim=(2, 3), keepdim=True)
    var = feat.var(dim=(2, 3), keepdim=True, unbiased=False)
    return (feat - mu) / torch.sqrt(var + eps)


def add_motion(feat: torch.Tensor, s_lm: torch.Tensor, d_lm: torch.Tensor,
               projection: torch.Tensor) -> torch.Tensor:
    """feat + broadcast(projection @ (d_lm - s_lm)); projection is (C, D), no offset."""
    if s_lm.shape != d_lm.shape:
        raise DimensionError(f"landmark vectors differ in shape: {tuple(s_lm.shape)} vs {tuple(d_lm.shape)}")
    if projection.shape[0] != feat.shape[1] or projection.shape[1] != s_lm.shape[-1]:
        raise DimensionError(
            f"projection {tuple(projection.shape)} does not map {s_lm.shape[-1]} -> {feat.shape[1]}")
    delta = F.linear(d_lm - s_lm, projection)
    return feat + delta[:, :, None, None]


class AdaIN(nn.Module):
    """AdaIN site.  With ``conditioned=False`` it is a plain instance norm with a
    learned affine (the no-AdaIN ablation)."""

    def __init__(self, channels: int, cond_dim: int, conditioned: bool = True):
        super().__init__()
        self.channels = channels
        self.conditioned = conditioned
        init_bias = torch.cat([torch.ones(channels), torch.zeros(channels)])
        if conditioned:
            self.weight = nn.Parameter(torch.randn(2 * channels, cond_dim) * 0.02)
        else:
            self.register_buffer("weight", torch.zeros(2 * channels, cond_dim))
        self.bias = nn.Parameter(init_bias)

    def forward(self, feat, lm_vec):
        return adain(feat, lm_vec, self.weight, self.bias)


class AddMotion(nn.Module):
    def __init__(self, channels: int, cond_dim: int):
        super().__init__()
        self.projection = nn.Parameter(torch.randn(channels, cond_dim) / cond_dim ** 0.5)

    def forward(self, feat, s_vec, d_vec):
        return add_motion(feat, s_vec, d_vec, self.projection)


@dataclass
class BranchConfig:
    input_size: int
    landmark_subset: list[int]
    emits_mask: bool = False
    depth: int = 4
    base_channels: int = 16
    max_channels: int = 64
    use_adain: bool = True
    use_add_motion: bool = True

    def __post_init__(self):
        n = self.input_size
        if n < 16 or n & (n - 1):
            raise DimensionError(f"branch input size must be a power of two >= 16, got {n}")
        if any(i < 0 or i >= Layout74.n_points for i in self.landmark_subset):
            raise DimensionError("landmark subset index outside the 74-point layout")
        if n >> self.depth < 2:
            raise DimensionError(f"depth {self.depth} leaves no spatial extent at size {n}")

    @property
    def cond_dim(self) -> int:
        return 2 * len(self.landmark_subset)

    def channels(self, level: int) -> int:
        return min(self.base_channels * 2 ** level, self.max_channels)


class _Block(nn.Module):
    def __init__(self, cin, cout, cond_dim, conditioned):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)
        self.norm = AdaIN(cout, cond_dim, conditioned)

    def forward(self, x, lm_vec):
        return F.leaky_relu(self.norm(self.conv(x), lm_vec), 0.2)


class MotionBranch(nn.Module):
    """Encoder-decoder producing a backward field (and optionally a mask) for
    its own input frame."""

    def __init__(self, cfg: BranchConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.cond_dim
        self.stem = _Block(3, cfg.channels(0), d, cfg.use_adain)
        self.down = nn.ModuleList(
            _Block(cfg.channels(i), cfg.channels(i + 1), d, cfg.use_adain) for i in range(cfg.depth))
        self.up = nn.ModuleList(
            _Block(cfg.channels(i + 1), cfg.channels(i), d, cfg.use_adain)
            for i in reversed(range(cfg.depth)))
        self.add_motion = AddMotion(cfg.channels(cfg.depth), d) if cfg.use_add_motion else None
        self.field_head = nn.Conv2d(cfg.channels(0), 2, 3, padding=1)
        nn.init.zeros_(self.field_head.weight)
        nn.init.zeros_(self.field_head.bias)
        if cfg.emits_mask:
            self.mask_head = nn.Conv2d(cfg.channels(0), 1, 3, padding=1)
            nn.init.zeros_(self.mask_head.weight)
            nn.init.zeros_(self.mask_head.bias)
        else:
            self.mask_head = None

    def forward(self, img, s_vec, d_vec):
        n = self.cfg.input_size
        if img.dim() != 4 or img.shape[-2:] != (n, n):
            raise DimensionError(f"branch expects {n}x{n} input, got {tuple(img.shape)}")
        x = self.stem(img, s_vec)
        for block in self.down:
            x = block(F.avg_pool2d(x, 2), s_vec)
        if self.add_motion is not None:
            x = self.add_motion(x, s_vec, d_vec)
        for block in self.up:
            x = block(F.interpolate(x, scale_factor=2.0, mode="bilinear", align_corners=False), d_vec)
        field = identity_field(n, n, x.dtype, x.device) + self.field_head(x).permute(0, 2, 3, 1)
        mask = torch.sigmoid(self.mask_head(x)) if self.mask_head is not None else None
        return field, mask


def run_branch(img, s_lm, d_lm, branch: MotionBranch):
    """Run one branch on (B, 3, n, n) input with (B, k, 2) landmarks already
    restricted to the branch's subset and expressed in its frame."""
    if s_lm.shape[-2] != len(branch.cfg.landmark_subset):
        raise DimensionError(
            f"branch expects {len(branch.cfg.landmark_subset)} landmarks, got {s_lm.shape[-2]}")
    return branch(img, s_lm.flatten(-2), d_lm.flatten(-2))


@dataclass
class MotionNetConfig:
    image_size: int = 256
    patch_size: int | None = None
    global_depth: int = 4
    local_depth: int = 3
    base_channels: int = 16
    max_channels: int = 64
    local_base_channels: int = 16
    local_max_channels: int = 64
    use_local: bool = True
    use_adain: bool = True
    use_add_motion: bool = True
    layout_id: str = "74"

    def __post_init__(self):
        if self.patch_size is None:
            self.patch_size = self.image_size // 4

    def global_branch(self) -> BranchConfig:
        return BranchConfig(self.image_size, list(range(Layout74.n_points)), False,
                            self.global_depth, self.base_channels, self.max_channels,
                            self.use_adain, self.use_add_motion)

    def local_branches(self) -> dict[str, BranchConfig]:
        return {name: BranchConfig(self.patch_size, list(idx), True, self.local_depth,
                                   self.local_base_channels, self.local_max_channels,
                                   self.use_adain, self.use_add_motion)
                for name, idx in Layout74.regions.items()}

    def to_dict(self) -> dict:
        return asdict(self)


class MotionNet(nn.Module):
    def __init__(self, cfg: MotionNetConfig):
        super().__init__()
        self.cfg = cfg
        self.global_branch = MotionBranch(cfg.global_branch())
        if cfg.use_local:
            self.local_branches = nn.ModuleDict(
                {name: MotionBranch(bc) for name, bc in cfg.local_branches().items()})
        else:
            self.local_branches = nn.ModuleDict()

    def regions(self, s_lm: torch.Tensor) -> dict[str, list[RegionSpec]]:
        """Patch regions per local branch, centred on the source subset means."""
        n, p = self.cfg.image_size, self.cfg.patch_size
        pix = landmarks_to_pixels(s_lm.detach().double(), n, n)
        out = {}
        for name, branch in self.local_branches.items():
            pts = pix[:, branch.cfg.landmark_subset]
            if bool((pts.std(dim=1).amax(dim=-1) < 1e-9).any()):
                raise RegionError(f"{name} landmarks collapse to a point")
            centers = pts.mean(dim=1)
            out[name] = [RegionSpec.around(c.tolist(), p, n, n) for c in centers]
        return out

    def forward(self, src, s_lm, d_lm, return_parts: bool = False):
        n = self.cfg.image_size
        if src.dim() != 4 or src.shape[-2:] != (n, n):
            raise DimensionError(f"motion net expects {n}x{n} frames, got {tuple(src.shape)}")
        if s_lm.shape != d_lm.shape or s_lm.shape[-2] != Layout74.n_points:
            raise DimensionError("source/driving landmarks must both be (B, 74, 2)")
        g_field, _ = run_branch(src, s_lm, d_lm, self.global_branch)
        parts = {"global": g_field, "locals": {}}
        if not self.local_branches:
            return (g_field, parts) if return_parts else g_field
        locals_ = []
        for name, regs in self.regions(s_lm).items():
            branch = self.local_branches[name]
            idx = branch.cfg.landmark_subset
            crops, s_loc, d_loc = [], [], []
            for b, region in enumerate(regs):
                rows, cols = region.slices
                crops.append(src[b, :, rows, cols])
                s_loc.append(region.to_local(s_lm[b, idx]))
                d_loc.append(region.to_local(d_lm[b, idx]))
            l_field, l_mask = run_branch(torch.stack(crops), torch.stack(s_loc),
                                         torch.stack(d_loc), branch)
            locals_.append((l_field, l_mask, regs))
            parts["locals"][name] = (l_field, l_mask, regs)
        field = combine_fields(g_field, locals_)
        return (field, parts) if return_parts else field


def generate_motion(src, s_lm, d_lm, net: MotionNet, return_parts: bool = False):
    """Full-frame backward motion field for driving landmarks ``d_lm``."""
    return net(src, s_lm, d_lm, return_parts=return_parts)
