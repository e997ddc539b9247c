import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import parsing_loss_oracle
from facemotion.errors import ConfigError, DimensionError, ParameterError
from facemotion.losses import (IdentityExtractor, LossWeights, RandomConvExtractor, lsgan_d_loss,
                               lsgan_g_loss, make_extractor, parsing_loss, perceptual_loss,
                               reconstruction_l1, soft_parsing_loss, total_loss)
from facemotion.warpfield import ParsingMap, identity_field


def _loop_conv_features(ext, img):
    """Conv + ReLU (+ 2x2 average pooling between levels) written with loops."""
    x = img[0].detach().double().numpy()
    feats = []
    for level, conv in enumerate(ext.layers):
        if level:
            c, h, w = x.shape
            x = 0.25 * (x[:, 0:h:2, 0:w:2] + x[:, 1:h:2, 0:w:2] + x[:, 0:h:2, 1:w:2] + x[:, 1:h:2, 1:w:2])
        wt = conv.weight.detach().double().numpy()
        bias = conv.bias.detach().double().numpy()
        cin, h, w = x.shape
        pad = np.zeros((cin, h + 2, w + 2))
        pad[:, 1:-1, 1:-1] = x
        out = np.zeros((wt.shape[0], h, w))
        for o in range(wt.shape[0]):
            for i in range(h):
                for j in range(w):
                    out[o, i, j] = bias[o] + (wt[o] * pad[:, i:i + 3, j:j + 3]).sum()
        x = np.maximum(out, 0)
        feats.append(x)
    return feats


def test_perceptual_zero_on_equal():
    img = torch.rand(2, 3, 8, 8)
    assert perceptual_loss(img, img.clone(), make_extractor("random-conv")) == 0


def test_perceptual_identity_extractor_is_channel_sum_of_l1():
    a, b = torch.rand(2, 2, 3, 6, 6, dtype=torch.float64)
    expected = sum((a[:, c] - b[:, c]).abs().mean() for c in range(3))
    torch.testing.assert_close(perceptual_loss(a, b, IdentityExtractor()), expected, atol=1e-15, rtol=0)
    torch.testing.assert_close(perceptual_loss(a, b, IdentityExtractor()), 3 * reconstruction_l1(a, b),
                               atol=1e-15, rtol=0)


@pytest.mark.parametrize("seed", range(3))
def test_perceptual_random_conv_matches_loop_oracle(seed):
    ext = RandomConvExtractor(channels=(4, 6), seed=seed).double()
    g = torch.Generator().manual_seed(seed)
    a = torch.rand(1, 3, 6, 6, generator=g, dtype=torch.float64)
    b = torch.rand(1, 3, 6, 6, generator=g, dtype=torch.float64)
    fa, fb = _loop_conv_features(ext, a), _loop_conv_features(ext, b)
    expected = 0.0
    for xa, xb in zip(fa, fb):
        for c in range(xa.shape[0]):
            expected += np.abs(xa[c] - xb[c]).mean()
    assert perceptual_loss(a, b, ext).item() == pytest.approx(expected, abs=1e-12)


def test_perceptual_shape_mismatch():
    with pytest.raises(DimensionError):
        perceptual_loss(torch.rand(1, 3, 4, 4), torch.rand(1, 3, 4, 5), IdentityExtractor())


def test_unknown_extractor():
    with pytest.raises(ConfigError):
        make_extractor("vgg")


def test_random_conv_is_frozen_and_deterministic():
    a, b = RandomConvExtractor(seed=4), RandomConvExtractor(seed=4)
    assert all(not p.requires_grad for p in a.parameters())
    img = torch.rand(1, 3, 16, 16)
    assert all(torch.equal(x, y) for x, y in zip(a(img), b(img)))


@pytest.mark.parametrize("real,fake,expected", [(1.0, 0.0, 0.0), (0.0, 1.0, 2.0), (0.5, 0.5, 0.5)])
def test_lsgan_d_values(real, fake, expected):
    val = lsgan_d_loss(torch.full((2, 1, 3, 3), real), torch.full((2, 1, 3, 3), fake))
    assert val.item() == pytest.approx(expected)


@pytest.mark.parametrize("fake,expected", [(1.0, 0.0), (0.0, 1.0), (0.25, 0.5625)])
def test_lsgan_g_values(fake, expected):
    assert lsgan_g_loss(torch.full((1, 1, 4, 4), fake)).item() == pytest.approx(expected)


def test_lsgan_rejects_non_finite():
    with pytest.raises(ParameterError):
        lsgan_g_loss(torch.tensor([float("nan")]))
    with pytest.raises(ParameterError):
        lsgan_d_loss(torch.tensor([1.0]), torch.tensor([float("inf")]))


def test_parsing_loss_cases():
    pm = torch.randint(0, 6, (1, 6, 6))
    ident = identity_field(6, 6, torch.float64)
    assert parsing_loss(pm, pm.clone(), ident).item() == 0
    other = pm.clone()
    other[:, :3] = (other[:, :3] + 1) % 6
    assert parsing_loss(pm, other, ident).item() == pytest.approx(0.5)


def test_parsing_loss_one_pixel_shift_2x2():
    src = torch.tensor([[[1, 2], [1, 2]]])
    drv = torch.tensor([[[2, 2], [2, 2]]])
    field = identity_field(2, 2, torch.float64).clone()
    field[..., 0] += 1.0  # sample one pixel to the right; the right column clamps
    assert parsing_loss(src, drv, field).item() == 0


def test_parsing_palette_mismatch():
    a = ParsingMap(torch.zeros(1, 2, 2, dtype=torch.long), (0, 1, 2))
    b = ParsingMap(torch.zeros(1, 2, 2, dtype=torch.long), (0, 1))
    with pytest.raises(ConfigError):
        parsing_loss(a, b, identity_field(2, 2))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_parsing_loss_permutation_invariant_and_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    src = rng.integers(0, 6, (5, 5))
    drv = rng.integers(0, 6, (5, 5))
    field = rng.uniform(-1.2, 1.2, (5, 5, 2))
    perm = rng.permutation(6)
    f = torch.as_tensor(field)[None]
    base = parsing_loss(torch.as_tensor(src)[None], torch.as_tensor(drv)[None], f).item()
    permuted = parsing_loss(torch.as_tensor(perm[src])[None], torch.as_tensor(perm[drv])[None], f).item()
    assert base == permuted
    assert abs(base - parsing_loss_oracle(src, drv, field)) < 1e-12
    assert 0 <= base <= 1


def test_soft_parsing_agrees_on_integer_shift():
    src = torch.randint(0, 4, (1, 5, 5))
    ident = identity_field(5, 5, torch.float64)
    assert soft_parsing_loss(src, src, ident, 4).item() == 0
    drv = (src + 1) % 4
    assert soft_parsing_loss(src, drv, ident, 4).item() == pytest.approx(1.0)


def test_soft_parsing_has_field_gradient():
    src = torch.zeros(1, 6, 6, dtype=torch.long)
    src[:, :, 3:] = 1
    field = (identity_field(6, 6, torch.float64) + 0.05).requires_grad_()
    soft_parsing_loss(src, src, field, 2).backward()
    assert field.grad.abs().sum() > 0


def test_reconstruction_l1_values():
    assert reconstruction_l1(torch.zeros(1, 3, 2, 2), torch.ones(1, 3, 2, 2)).item() == 1
    val = reconstruction_l1(torch.full((1, 3, 2, 2), 0.3, dtype=torch.float64),
                            torch.full((1, 3, 2, 2), 0.7, dtype=torch.float64))
    assert val.item() == pytest.approx(0.4, abs=1e-15)


def test_total_loss_cases():
    terms = {"per": torch.tensor(0.1), "l1": torch.tensor(0.2), "gan": torch.tensor(0.3),
             "par": torch.tensor(0.4)}
    assert float(total_loss(terms, LossWeights())) == pytest.approx(1.0)
    assert float(total_loss(terms, LossWeights(w_par=0))) == pytest.approx(0.6)
    no_par = {k: v for k, v in terms.items() if k != "par"}
    assert float(total_loss(no_par, LossWeights(2, 1, 1, 0))) == pytest.approx(0.7)
    assert float(total_loss({**terms, "par": None}, LossWeights())) == pytest.approx(0.6)


def test_loss_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(w_per=-1)
    with pytest.raises(ConfigError):
        LossWeights(0, 0, 0, 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_losses_nonnegative(seed):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.rand(2, 1, 3, 8, 8, generator=g)
    s = torch.randn(2, 1, 2, 2, generator=g)
    assert perceptual_loss(a, b, make_extractor("random-conv")) >= 0
    assert reconstruction_l1(a, b) >= 0
    assert lsgan_d_loss(s[0], s[1]) >= 0 and lsgan_g_loss(s[0]) >= 0
