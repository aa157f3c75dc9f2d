import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from clipstylist.encoders import (
    AttentionBlock,
    ClothesEncoder,
    GeometricParams,
    IdentityEncoder,
    PoseEncoder,
    attention_block,
    encode_clothes,
    encode_identity,
    encode_pose,
    geometric_transform,
    parameter_count,
    random_geometric_transform,
)


def _seeded(cls, *args, seed=0):
    torch.manual_seed(seed)
    return cls(*args).eval()


def test_pose_pyramid_shapes():
    enc = _seeded(PoseEncoder, 3, 32)
    levels = encode_pose(enc, torch.zeros(2, 3, 64, 64))
    assert [tuple(l.shape[1:]) for l in levels] == [(32, 32, 32), (64, 16, 16), (128, 8, 8)]


def test_identity_pyramid_half_width():
    enc = _seeded(IdentityEncoder, 3, 32)
    levels = encode_identity(enc, torch.rand(1, 3, 64, 64) * 2 - 1)
    assert [tuple(l.shape[1:]) for l in levels] == [(16, 32, 32), (32, 16, 16), (64, 8, 8)]


def test_identity_parameter_count_below_half_of_pose():
    pose, ident = PoseEncoder(3, 32), IdentityEncoder(3, 32)
    assert parameter_count(ident) < parameter_count(pose)
    assert parameter_count(ident) < parameter_count(pose) / 2


def test_identity_black_frame_is_finite():
    enc = _seeded(IdentityEncoder, 3, 32)
    levels = enc(torch.full((1, 3, 64, 64), -1.0))
    assert all(torch.isfinite(l).all() for l in levels)


def test_encoder_eval_determinism():
    enc = _seeded(PoseEncoder, 3, 16)
    x = torch.rand(1, 3, 32, 32) * 2 - 1
    a, b = enc(x), enc(x)
    assert all(torch.equal(u, v) for u, v in zip(a, b))


def test_single_pixel_perturbation_changes_level0():
    enc = _seeded(PoseEncoder, 3, 16, seed=3)
    x = torch.rand(1, 3, 32, 32) * 2 - 1
    y = x.clone()
    y[0, 1, 10, 10] += 0.5
    diff = (enc(x)[0] - enc(y)[0]).abs()
    assert diff.max() > 0
    # a stride-2 3x3 conv sees pixel (10, 10) only from output cells 4..5 before normalisation/attention
    assert diff[0, :, 4:6, 4:6].max() > 0


@pytest.mark.parametrize("size", [8, 16, 40])
def test_rejects_size_not_divisible(size):
    enc = PoseEncoder(3, 8)
    with pytest.raises(ValueError, match="multiple of 8"):
        enc(torch.zeros(1, 3, size + 4, size))


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 9), st.integers(2, 9))
def test_shape_law_over_sizes(hk, wk):
    h, w = 8 * hk, 8 * wk
    enc = PoseEncoder(3, 8).eval()
    levels = enc(torch.zeros(1, 3, h, w))
    for k, level in enumerate(levels):
        assert level.shape[1:] == (8 * 2**k, h // 2 ** (k + 1), w // 2 ** (k + 1))
    style = ClothesEncoder(3, 8, style_dim=24).eval()(torch.zeros(1, 3, h, w))
    assert style.vector.shape == (1, 24)
    assert style.coarse.shape[1:] == (32, h // 8, w // 8)


def test_every_encoder_parameter_gets_gradient():
    torch.manual_seed(0)
    for enc in (PoseEncoder(3, 8), IdentityEncoder(3, 8)):
        seen = {n: False for n, _ in enc.named_parameters()}
        for trial in range(4):
            enc.zero_grad()
            x = torch.rand(2, 3, 32, 32) * 2 - 1
            sum((l * torch.randn_like(l)).sum() for l in enc(x)).backward()
            for n, p in enc.named_parameters():
                seen[n] |= bool(p.grad is not None and p.grad.abs().sum() > 0)
        assert all(seen.values()), [n for n, ok in seen.items() if not ok]
    enc = ClothesEncoder(3, 8, 16)
    seen = {n: False for n, _ in enc.named_parameters()}
    for trial in range(4):
        enc.zero_grad()
        out = enc(torch.rand(1, 3, 32, 32) * 2 - 1)
        ((out.vector * torch.randn_like(out.vector)).sum() + (out.coarse * torch.randn_like(out.coarse)).sum()).backward()
        for n, p in enc.named_parameters():
            seen[n] |= bool(p.grad is not None and p.grad.abs().sum() > 0)
    assert all(seen.values()), [n for n, ok in seen.items() if not ok]


# --- attention ------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 16), st.integers(1, 9), st.integers(1, 9), st.integers(0, 10_000))
def test_attention_shape_and_contraction(c, h, w, seed):
    torch.manual_seed(seed)
    block = AttentionBlock(c)
    x = torch.randn(c, h, w) * 3
    y = attention_block(x, block)
    assert y.shape == x.shape
    assert torch.all(y.abs() <= x.abs())
    assert y.abs().max() <= x.abs().max()


def test_attention_zero_in_zero_out():
    block = AttentionBlock(8)
    assert torch.equal(attention_block(torch.zeros(8, 5, 5), block), torch.zeros(8, 5, 5))


def test_attention_gates_in_open_interval():
    torch.manual_seed(1)
    block = AttentionBlock(16)
    cg, sg = block.gates(torch.randn(2, 16, 6, 6))
    for g in (cg, sg):
        assert torch.all(g > 0) and torch.all(g < 1)
    assert cg.shape == (2, 16, 1, 1) and sg.shape == (2, 1, 6, 6)


def test_attention_gradient_matches_finite_differences():
    torch.manual_seed(0)
    block = AttentionBlock(2).double()
    x = torch.randn(2, 4, 4, dtype=torch.float64, requires_grad=True)
    w = torch.randn(2, 4, 4, dtype=torch.float64)

    def f(inp):
        return (attention_block(inp, block) * w).sum()

    f(x).backward()
    analytic = x.grad.clone()
    numeric = torch.zeros_like(analytic)
    h = 1e-3
    with torch.no_grad():
        for idx in np.ndindex(*x.shape):
            xp, xm = x.detach().clone(), x.detach().clone()
            xp[idx] += h
            xm[idx] -= h
            numeric[idx] = (f(xp) - f(xm)) / (2 * h)
    rel = (analytic - numeric).norm() / numeric.norm()
    assert rel <= 1e-3


# --- clothes branch and augmentation --------------------------------------


def test_clothes_eval_determinism():
    enc = _seeded(ClothesEncoder, 3, 8, 16)
    img = torch.rand(3, 32, 32) * 2 - 1
    a, b = encode_clothes(enc, img), encode_clothes(enc, img)
    assert torch.equal(a.vector, b.vector) and torch.equal(a.coarse, b.coarse)


def test_clothes_train_mode_is_stochastic():
    enc = _seeded(ClothesEncoder, 3, 8, 16)
    img = torch.rand(3, 32, 32) * 2 - 1
    rng = np.random.default_rng(0)
    a, b = encode_clothes(enc, img, True, rng), encode_clothes(enc, img, True, rng)
    assert not torch.equal(a.vector, b.vector)
    with pytest.raises(ValueError):
        encode_clothes(enc, img, training=True)


@pytest.mark.parametrize("size", [16, 32, 48])
def test_style_vector_length(size):
    enc = _seeded(ClothesEncoder, 3, 8, 20)
    assert encode_clothes(enc, torch.zeros(3, size, size)).vector.shape == (20,)


def test_identity_transform_is_exact():
    img = torch.rand(3, 16, 16) * 2 - 1
    assert torch.equal(geometric_transform(img, GeometricParams()), img)


def test_random_transform_reproducible_and_in_range():
    img = torch.rand(3, 32, 32) * 2 - 1
    a = random_geometric_transform(img, np.random.default_rng(5))
    b = random_geometric_transform(img, np.random.default_rng(5))
    assert torch.equal(a, b)
    for seed in range(20):
        out = random_geometric_transform(img, np.random.default_rng(seed))
        assert out.shape == img.shape
        assert out.min() >= -1 and out.max() <= 1


def test_draw_ranges():
    rng = np.random.default_rng(0)
    draws = [GeometricParams.draw(rng) for _ in range(2000)]
    assert all(-15 <= d.angle <= 15 for d in draws)
    assert all(0.8 <= d.scale <= 1.25 for d in draws)
    assert all(abs(d.shift_x) <= 0.1 and abs(d.shift_y) <= 0.1 for d in draws)
    assert 0.45 < np.mean([d.flip for d in draws]) < 0.55


def test_flip_mirrors_columns():
    img = torch.arange(16.0).reshape(1, 4, 4) / 16
    out = geometric_transform(img, GeometricParams(flip=True))
    assert torch.allclose(out, img.flip(-1), atol=1e-6)


def test_shift_fills_with_black():
    img = torch.ones(3, 16, 16)
    out = geometric_transform(img, GeometricParams(shift_x=0.1 * 1.0))
    # content moved right by ~1.6 px, so the leftmost column is uncovered
    assert torch.all(out[:, :, 0] < 0)
    assert torch.all(out[:, :, -1] == 1)
