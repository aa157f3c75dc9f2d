"""Adversarial (least-squares), reconstruction, style, video and local losses and their weighted sum."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import torch
import torch.nn.functional as F

from .discriminators import REGION_KINDS, crop_region
from .features import FeatureExtractor

TERMS = ("adv", "r", "s", "v", "l")


@dataclass(frozen=True)
class LossWeights:
    lambda_adv: float = 1.0
    lambda_r: float = 5.0
    lambda_s: float = 50.0
    lambda_v: float = 1.5
    lambda_l: float = 2.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and >= 0, got {v}")

    def for_term(self, term: str) -> float:
        return getattr(self, f"lambda_{term}")


@dataclass
class LossBreakdown:
    adv: float = 0.0
    r: float = 0.0
    s: float = 0.0
    v: float = 0.0
    l: float = 0.0  # noqa: E741
    total: float = 0.0
    sub: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def lsgan_d_loss(real_scores, fake_scores):
    return 0.5 * ((real_scores - 1) ** 2).mean() + 0.5 * (fake_scores**2).mean()


def lsgan_g_loss(fake_scores):
    return 0.5 * ((fake_scores - 1) ** 2).mean()


def gram_matrix(features):
    """``F F^T / (C h w)`` for ``C x h x w`` features, batched over leading dims."""
    *lead, c, h, w = features.shape
    flat = features.reshape(*lead, c, h * w)
    return flat @ flat.transpose(-1, -2) / (c * h * w)


def pixel_loss(gen, gt):
    if gen.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(gen.shape)} vs {tuple(gt.shape)}")
    return (gen - gt).abs().mean()


def _batched(x):
    return x[None] if x.dim() == 3 else x


def perceptual_loss(gen, gt, fx: FeatureExtractor, layers=None):
    fg, ft = fx(_batched(gen)), fx(_batched(gt))
    return sum((fg[k] - ft[k]).abs().mean() for k in (layers or fx.layers))


def alpha_loss(alpha, mask):
    """Pixelwise binary cross-entropy of the matte against a binary person mask."""
    if alpha.shape != mask.shape:
        raise ValueError(f"alpha {tuple(alpha.shape)} vs mask {tuple(mask.shape)}")
    return F.binary_cross_entropy(alpha.clamp(1e-6, 1 - 1e-6), mask)


def reconstruction_loss(gen, gt, fx: FeatureExtractor, layers=None, alpha=None, mask=None, alpha_weight: float = 1.0):
    """L1 pixel term + per-layer L1 feature terms (+ matte supervision when ``alpha`` and ``mask`` are given)."""
    loss = pixel_loss(gen, gt) + perceptual_loss(gen, gt, fx, layers)
    if alpha is not None and mask is not None:
        loss = loss + alpha_weight * alpha_loss(alpha, mask)
    return loss


def style_loss(gen, gt, fx: FeatureExtractor, layers=None):
    """Sum over layers of the mean absolute Gram-matrix difference."""
    if gen.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(gen.shape)} vs {tuple(gt.shape)}")
    fg, ft = fx(_batched(gen)), fx(_batched(gt))
    return sum((gram_matrix(fg[k]) - gram_matrix(ft[k])).abs().mean() for k in (layers or fx.layers))


def adversarial_g_loss(d_image, d_pose, frames, pose):
    """Generator side of the image and pose critics, summed."""
    return lsgan_g_loss(d_image(frames)) + lsgan_g_loss(d_pose(frames, pose))


def video_loss(fake_frames, d_t, d_if):
    """Mean over K-windows of the sequence critic's generator loss plus mean over adjacent pairs of the inner-frame one.

    With fewer frames than the window only the inner-frame part contributes.
    """
    if fake_frames.shape[0] < 2:
        raise ValueError("video loss needs at least 2 frames")
    loss = lsgan_g_loss(d_if.score_sequence(fake_frames))
    windows = d_t.windows(fake_frames)
    if windows.shape[0]:
        loss = loss + lsgan_g_loss(d_t(windows))
    return loss


def region_patches(frames, masks, kind: str, size: int = 16):
    """Valid patches of a ``T x 3 x H x W`` sequence as an ``N x 3 x P x P`` batch (N may be 0)."""
    patches = [crop_region(f, m, kind, size) for f, m in zip(frames, masks)]
    valid = [p.pixels for p in patches if p.valid]
    if not valid:
        return frames.new_zeros((0, frames.shape[1], size, size))
    return torch.stack(valid)


def local_loss(gen_frames, head_masks, hands_masks, d_local, size: int = 16):
    """Mean generator loss over every valid head/hands patch; 0 when no mask has support.

    ``d_local`` maps region kind to its critic.
    """
    if gen_frames.dim() == 3:
        gen_frames, head_masks, hands_masks = gen_frames[None], head_masks[None], hands_masks[None]
    per_patch = []
    for kind, masks in zip(REGION_KINDS, (head_masks, hands_masks)):
        batch = region_patches(gen_frames, masks, kind, size)
        if batch.shape[0]:
            scores = d_local[kind](batch)
            per_patch.append(0.5 * ((scores - 1) ** 2).flatten(1).mean(dim=1))
    if not per_patch:
        return gen_frames.new_zeros(())
    return torch.cat(per_patch).mean()


def total_loss(terms: dict, weights: LossWeights):
    """Weighted sum over the five terms; missing terms count as 0."""
    total = 0.0
    for name in TERMS:
        w = weights.for_term(name)
        if w:
            total = total + w * terms.get(name, 0.0)
    return total


def breakdown(terms: dict, weights: LossWeights, sub: dict | None = None) -> LossBreakdown:
    vals = {k: float(terms.get(k, 0.0)) for k in TERMS}
    return LossBreakdown(**vals, total=float(total_loss(vals, weights)), sub=dict(sub or {}))
