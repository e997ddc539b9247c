"""Image generation network, compositing and the end-to-end animator."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DimensionError
from .motion_net import MotionNet, MotionNetConfig
from .warpfield import field_to_displacement, warp_bilinear


def _conv(cin, cout):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.LeakyReLU(0.2))


@dataclass
class GeneratorConfig:
    base_channels: int = 16
    depth: int = 3
    use_field: bool = True
    mask_bias: float = -2.0


class GeneratorNet(nn.Module):
    """U-Net refining the warped source.

    Input is the warped image, concatenated with the motion field as a
    displacement from the identity unless ``use_field`` is off.  Outputs a
    residual image and a compositing mask, both squashed to [0, 1].
    """

    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        cfg = cfg or GeneratorConfig()
        self.cfg = cfg
        c = cfg.base_channels
        widths = [min(c * 2 ** i, 4 * c) for i in range(cfg.depth + 1)]
        cin = 5 if cfg.use_field else 3
        self.inp = _conv(cin, widths[0])
        self.down = nn.ModuleList(_conv(widths[i], widths[i + 1]) for i in range(cfg.depth))
        self.up = nn.ModuleList(_conv(widths[i + 1] + widths[i], widths[i])
                                for i in reversed(range(cfg.depth)))
        self.residual_head = nn.Conv2d(widths[0], 3, 3, padding=1)
        self.mask_head = nn.Conv2d(widths[0], 1, 3, padding=1)
        nn.init.constant_(self.mask_head.bias, cfg.mask_bias)

    def forward(self, warped, field):
        if warped.dim() != 4 or field.dim() != 4 or warped.shape[-2:] != field.shape[1:3]:
            raise DimensionError(
                f"warped image {tuple(warped.shape)} and field {tuple(field.shape)} do not match")
        if self.cfg.use_field:
            x = torch.cat([warped, field_to_displacement(field).to(warped.dtype)], dim=1)
        else:
            x = warped
        skips = [self.inp(x)]
        for block in self.down:
            skips.append(block(F.avg_pool2d(skips[-1], 2)))
        x = skips.pop()
        for block in self.up:
            x = F.interpolate(x, scale_factor=2.0, mode="bilinear", align_corners=False)
            x = block(torch.cat([x, skips.pop()], dim=1))
        return torch.sigmoid(self.residual_head(x)), torch.sigmoid(self.mask_head(x))


class DiscriminatorNet(nn.Module):
    """Patch discriminator returning a (B, 1, h, w) score map."""

    def __init__(self, base_channels: int = 16, n_layers: int = 3):
        super().__init__()
        layers, cin = [], 3
        for i in range(n_layers):
            cout = base_channels * 2 ** i
            layers += [nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            cin = cout
        layers.append(nn.Conv2d(cin, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


def refine(warped, field, net: GeneratorNet):
    """(residual, mask) for a warped image and its motion field."""
    return net(warped, field)


def composite(warped, residual, mask):
    """warped * (1 - mask) + residual * mask."""
    if warped.shape != residual.shape:
        raise DimensionError(f"warped {tuple(warped.shape)} vs residual {tuple(residual.shape)}")
    if mask.dim() != 4 or mask.shape[1] != 1 or mask.shape[0] != warped.shape[0] \
            or mask.shape[-2:] != warped.shape[-2:]:
        raise DimensionError(f"mask {tuple(mask.shape)} does not match image {tuple(warped.shape)}")
    return warped * (1.0 - mask) + residual * mask


class Animator(nn.Module):
    """Motion network plus generator; the discriminator is owned by training."""

    def __init__(self, motion_cfg: MotionNetConfig, gen_cfg: GeneratorConfig | None = None):
        super().__init__()
        self.motion = MotionNet(motion_cfg)
        self.generator = GeneratorNet(gen_cfg)

    @property
    def image_size(self) -> int:
        return self.motion.cfg.image_size

    def config_dict(self) -> dict:
        return {"motion": self.motion.cfg.to_dict(), "generator": asdict(self.generator.cfg)}

    def forward(self, src, s_lm, d_lm):
        field = self.motion(src, s_lm, d_lm)
        warped = warp_bilinear(src, field)
        residual, mask = refine(warped, field, self.generator)
        return composite(warped, residual, mask), field, mask


def animate_frame(src, s_lm, d_lm, nets: Animator):
    """Returns (frame, motion field, compositing mask) for batched inputs."""
    return nets(src, s_lm, d_lm)


def animate_sequence(src, s_lm, seq, nets: Animator, return_fields: bool = False):
    """Animate ``src`` (1, 3, H, W) once per landmark set in ``seq``.

    Frames are independent; each is computed on its own so results do not
    depend on how the sequence is chunked.
    """
    frames, fields = [], []
    with torch.no_grad():
        for d_lm in seq:
            d = torch.as_tensor(d_lm, dtype=src.dtype).reshape(1, -1, 2)
            out, field, _ = animate_frame(src, s_lm.reshape(1, -1, 2).to(src.dtype), d, nets)
            frames.append(out)
            fields.append(field)
    return (frames, fields) if return_fields else frames
