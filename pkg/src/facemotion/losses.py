"""Training objectives: perceptual, least-squares GAN, parsing prior, L1, total."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError, ParameterError
from .warpfield import ParsingMap, warp_bilinear, warp_nearest


class IdentityExtractor:
    """Features are the raw image channels."""

    name = "identity"

    def __call__(self, img):
        return [img]


class RandomConvExtractor(nn.Module):
    """Frozen random conv stack; every ReLU output is one feature level."""

    name = "random-conv"

    def __init__(self, channels=(8, 16, 32), seed: int = 0, in_channels: int = 3):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers, cin = [], in_channels
        for cout in channels:
            conv = nn.Conv2d(cin, cout, 3, padding=1)
            fan_in = cin * 9
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                conv.bias.copy_(torch.randn(cout, generator=gen) * 0.1)
            layers.append(conv)
            cin = cout
        self.layers = nn.ModuleList(layers)
        self.requires_grad_(False)

    def forward(self, img):
        feats, x = [], img
        for i, conv in enumerate(self.layers):
            if i:
                x = F.avg_pool2d(x, 2)
            x = F.relu(conv(x.to(conv.weight.dtype)))
            feats.append(x)
        return feats


def make_extractor(name: str, seed: int = 0):
    if name == "identity":
        return IdentityExtractor()
    if name == "random-conv":
        return RandomConvExtractor(seed=seed)
    raise ConfigError(f"unknown feature extractor {name!r}")


def _same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def perceptual_loss(real, fake, fx) -> torch.Tensor:
    """Sum over feature channels of the mean absolute feature difference."""
    _same_shape(real, fake)
    total = fake.new_zeros(())
    for fr, ff in zip(fx(real), fx(fake)):
        total = total + (fr - ff).abs().mean(dim=(0, 2, 3)).sum()
    return total


def _finite(*ts):
    for t in ts:
        if not torch.isfinite(t).all():
            raise ParameterError("non-finite discriminator score")


def lsgan_d_loss(d_real, d_fake) -> torch.Tensor:
    _finite(d_real, d_fake)
    return ((1.0 - d_real) ** 2).mean() + (d_fake ** 2).mean()


def lsgan_g_loss(d_fake) -> torch.Tensor:
    _finite(d_fake)
    return ((1.0 - d_fake) ** 2).mean()


def _labels(pm):
    return pm.labels if isinstance(pm, ParsingMap) else pm


def _check_palettes(src, drv):
    if isinstance(src, ParsingMap) and isinstance(drv, ParsingMap):
        if set(src.palette) != set(drv.palette):
            raise ConfigError(f"parsing palettes differ: {src.palette} vs {drv.palette}")


def parsing_loss(src_parse, drv_parse, field) -> torch.Tensor:
    """Fraction of pixels whose nearest-warped source label differs from the driving label."""
    _check_palettes(src_parse, drv_parse)
    src, drv = _labels(src_parse), _labels(drv_parse)
    _same_shape(src, drv)
    warped = warp_nearest(src, field)
    return 1.0 - (warped == drv).double().mean()


def soft_parsing_loss(src_parse, drv_parse, field, n_labels: int) -> torch.Tensor:
    """Differentiable stand-in for ``parsing_loss``.

    One-hot label planes are warped bilinearly; the loss is the mean of
    1 - (warped probability of the driving label).
    """
    _check_palettes(src_parse, drv_parse)
    src, drv = _labels(src_parse), _labels(drv_parse)
    _same_shape(src, drv)
    onehot = F.one_hot(src.long(), n_labels).permute(0, 3, 1, 2).to(field.dtype)
    prob = warp_bilinear(onehot, field)
    matched = torch.gather(prob, 1, drv.long().unsqueeze(1))
    return 1.0 - matched.mean()


def reconstruction_l1(real, fake) -> torch.Tensor:
    _same_shape(real, fake)
    return (real - fake).abs().mean()


@dataclass
class LossWeights:
    w_per: float = 1.0
    w_l1: float = 1.0
    w_gan: float = 1.0
    w_par: float = 1.0

    def __post_init__(self):
        vals = (self.w_per, self.w_l1, self.w_gan, self.w_par)
        if any(v < 0 for v in vals):
            raise ConfigError(f"loss weights must be nonnegative, got {vals}")
        if not any(v > 0 for v in vals):
            raise ConfigError("at least one loss weight must be positive")


def total_loss(terms: dict, weights: LossWeights):
    """Weighted sum of the ``per``, ``l1``, ``gan`` and optional ``par`` terms."""
    total = 0.0
    for key, w in (("per", weights.w_per), ("l1", weights.w_l1),
                   ("gan", weights.w_gan), ("par", weights.w_par)):
        val = terms.get(key)
        if val is None or w == 0:
            continue
        if not bool(torch.isfinite(torch.as_tensor(val)).all()):
            raise ParameterError(f"loss term {key} is not finite")
        total = total + w * val
    return total
