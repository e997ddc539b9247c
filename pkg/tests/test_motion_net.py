import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from facemotion.errors import DegenerateError, DimensionError, RegionError
from facemotion.landmarks import Layout74
from facemotion.motion_net import (BranchConfig, MotionBranch, MotionNet, MotionNetConfig, adain,
                                   add_motion, generate_motion, run_branch)
from facemotion.synthface import FaceParams, face_landmarks, render
from facemotion.warpfield import identity_field


def _lm_batch(size=64, b=1):
    pts = torch.as_tensor(face_landmarks(FaceParams()).points, dtype=torch.float32)
    return pts.expand(b, -1, -1).clone()


def test_adain_unit_style_is_instance_norm():
    feat = torch.randn(2, 3, 5, 6, dtype=torch.float64)
    w = torch.zeros(6, 4, dtype=torch.float64)
    b = torch.tensor([1.0, 1, 1, 0, 0, 0], dtype=torch.float64)
    out = adain(feat, torch.randn(2, 4, dtype=torch.float64), w, b)
    assert out.mean(dim=(2, 3)).abs().max() < 1e-12
    var = feat.var(dim=(2, 3), unbiased=False)
    torch.testing.assert_close(out.var(dim=(2, 3), unbiased=False), var / (var + 1e-5), atol=1e-12, rtol=0)


def test_adain_matches_target_statistics():
    g = torch.Generator().manual_seed(0)
    z = torch.randn(1, 1, 16, 16, generator=g, dtype=torch.float64)
    z = (z - z.mean()) / z.std(unbiased=False)
    feat = 2 + 3 * z
    b = torch.tensor([5.0, 7.0], dtype=torch.float64)
    out = adain(feat, torch.zeros(1, 3, dtype=torch.float64), torch.zeros(2, 3, dtype=torch.float64), b)
    assert abs(out.mean().item() - 7) < 1e-5
    assert abs(out.std(unbiased=False).item() - 5) < 1e-5


def test_adain_constant_map_gives_bias():
    feat = torch.full((1, 2, 4, 4), 3.0, dtype=torch.float64)
    b = torch.tensor([4.0, -2.0, 0.5, 1.5], dtype=torch.float64)
    out = adain(feat, torch.zeros(1, 2, dtype=torch.float64), torch.zeros(4, 2, dtype=torch.float64), b)
    assert torch.equal(out[0, 0], torch.full((4, 4), 0.5, dtype=torch.float64))
    assert torch.equal(out[0, 1], torch.full((4, 4), 1.5, dtype=torch.float64))


def test_adain_errors():
    with pytest.raises(DimensionError):
        adain(torch.randn(1, 3, 4, 4), torch.randn(1, 2), torch.zeros(4, 2), torch.zeros(4))
    with pytest.raises(DegenerateError):
        adain(torch.randn(1, 2, 1, 1), torch.randn(1, 2), torch.zeros(4, 2), torch.zeros(4))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), c=st.integers(1, 6), hw=st.integers(2, 9))
def test_adain_statistics_property(seed, c, hw):
    g = torch.Generator().manual_seed(seed)
    feat = torch.randn(1, c, hw, hw, generator=g, dtype=torch.float64) * 4 + 1
    lm = torch.randn(1, 6, generator=g, dtype=torch.float64)
    w = torch.randn(2 * c, 6, generator=g, dtype=torch.float64)
    b = torch.randn(2 * c, generator=g, dtype=torch.float64)
    out = adain(feat, lm, w, b)
    style = w @ lm[0] + b
    var = feat.var(dim=(2, 3), unbiased=False)[0]
    torch.testing.assert_close(out.mean(dim=(2, 3))[0], style[c:], atol=1e-9, rtol=0)
    expected_std = style[:c].abs() * torch.sqrt(var / (var + 1e-5))
    torch.testing.assert_close(out.std(dim=(2, 3), unbiased=False)[0], expected_std, atol=1e-9, rtol=1e-9)


def test_add_motion_zero_motion_is_identity():
    feat = torch.randn(2, 4, 3, 3)
    s = torch.randn(2, 6)
    assert torch.equal(add_motion(feat, s, s.clone(), torch.randn(4, 6)), feat)


def test_add_motion_unit_projection_shifts_one_channel():
    feat = torch.randn(1, 4, 3, 3, dtype=torch.float64)
    s = torch.zeros(1, 4, dtype=torch.float64)
    d = torch.tensor([[1.0, 0, 0, 0]], dtype=torch.float64)
    out = add_motion(feat, s, d, torch.eye(4, dtype=torch.float64))
    assert torch.equal(out[:, 0], feat[:, 0] + 1)
    assert torch.equal(out[:, 1:], feat[:, 1:])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_add_motion_linear(seed):
    g = torch.Generator().manual_seed(seed)
    feat = torch.randn(1, 3, 2, 2, generator=g, dtype=torch.float64)
    s, d = torch.randn(2, 1, 8, generator=g, dtype=torch.float64)
    p = torch.randn(3, 8, generator=g, dtype=torch.float64)
    one = add_motion(feat, s, d, p) - feat
    two = add_motion(feat, s, s + 2 * (d - s), p) - feat
    torch.testing.assert_close(two, 2 * one, atol=1e-12, rtol=1e-12)


def test_add_motion_length_mismatch():
    with pytest.raises(DimensionError):
        add_motion(torch.randn(1, 2, 2, 2), torch.randn(1, 4), torch.randn(1, 6), torch.randn(2, 4))


def test_branch_config_validation():
    with pytest.raises(DimensionError):
        BranchConfig(24, [0, 1])
    with pytest.raises(DimensionError):
        BranchConfig(16, [0, 74])


def test_fresh_branch_is_identity_with_half_mask():
    torch.manual_seed(0)
    branch = MotionBranch(BranchConfig(16, list(range(12)), emits_mask=True, depth=2, base_channels=4))
    img = torch.rand(2, 3, 16, 16)
    lm = torch.rand(2, 12, 2) * 2 - 1
    field, mask = run_branch(img, lm, lm + 0.1, branch)
    assert torch.equal(field, identity_field(16, 16).expand(2, -1, -1, -1))
    assert torch.equal(mask, torch.full_like(mask, 0.5))


def _perturbed_branch(seed=0, n=16):
    torch.manual_seed(seed)
    branch = MotionBranch(BranchConfig(n, list(range(12)), emits_mask=True, depth=2, base_channels=4))
    with torch.no_grad():
        branch.field_head.weight.normal_(0, 0.05)
        branch.mask_head.weight.normal_(0, 0.05)
    return branch


def test_branch_deterministic():
    branch = _perturbed_branch()
    img, lm = torch.rand(1, 3, 16, 16), torch.rand(1, 12, 2)
    a = run_branch(img, lm, lm * 0.9, branch)
    b = run_branch(img, lm, lm * 0.9, branch)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


def test_branch_not_permutation_invariant():
    branch = _perturbed_branch(1)
    img = torch.rand(1, 3, 16, 16)
    s, d = torch.rand(1, 12, 2), torch.rand(1, 12, 2)
    perm = torch.randperm(12, generator=torch.Generator().manual_seed(3))
    f1, _ = run_branch(img, s, d, branch)
    f2, _ = run_branch(img, s[:, perm], d[:, perm], branch)
    assert not torch.allclose(f1, f2)


def test_branch_size_mismatch():
    branch = _perturbed_branch()
    with pytest.raises(DimensionError):
        run_branch(torch.rand(1, 3, 32, 32), torch.rand(1, 12, 2), torch.rand(1, 12, 2), branch)


def _small_net(**kw):
    torch.manual_seed(0)
    return MotionNet(MotionNetConfig(image_size=64, global_depth=2, local_depth=2,
                                     base_channels=4, local_base_channels=4, max_channels=8,
                                     local_max_channels=8, **kw))


def test_untrained_net_is_identity():
    net = _small_net()
    lm = _lm_batch()
    field = generate_motion(torch.rand(1, 3, 64, 64), lm, lm + 0.05, net)
    torch.testing.assert_close(field, identity_field(64, 64), atol=1e-6, rtol=0)


def test_zero_local_masks_give_global_field():
    net = _small_net()
    with torch.no_grad():
        net.global_branch.field_head.weight.normal_(0, 0.05)
        for br in net.local_branches.values():
            br.field_head.weight.normal_(0, 0.05)
            br.mask_head.bias.fill_(-1e4)
    lm = _lm_batch()
    img = torch.rand(1, 3, 64, 64)
    field, parts = generate_motion(img, lm, lm * 1.02, net, return_parts=True)
    assert torch.equal(field, parts["global"])


def test_regions_follow_source_subsets():
    net = _small_net()
    lm = _lm_batch()
    regs = net.regions(lm)
    assert set(regs) == set(Layout74.regions)
    for name, idx in Layout74.regions.items():
        r = regs[name][0]
        assert r.size == 16
        cx = ((lm[0, idx, 0].mean().item() + 1) * 64 - 1) / 2
        assert r.x0 <= cx <= r.x0 + r.size


def test_collapsed_landmarks_raise_region_error():
    net = _small_net()
    lm = _lm_batch()
    lm[:, Layout74.regions["mouth"]] = 0.3
    with pytest.raises(RegionError):
        generate_motion(torch.rand(1, 3, 64, 64), lm, lm, net)


def test_no_local_config_has_no_local_branches():
    net = _small_net(use_local=False)
    assert len(net.local_branches) == 0


def test_synth_render_regions_do_not_overlap():
    # the default synthetic face keeps the three 16 px patches disjoint at 64
    net = _small_net()
    frame = render(FaceParams(), 64)
    lm = frame.landmarks.tensor()[None]
    regs = [r[0] for r in net.regions(lm).values()]
    assert not any(a.overlaps(b) for i, a in enumerate(regs) for b in regs[i + 1:])
