"""Patch critics: image, pose, inner-frame (cross-frame difference), sequence and local."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoders import InstanceNorm

REGION_KINDS = ("head", "hands")


class PatchCritic(nn.Module):
    """Three stride-2 conv blocks and a 3x3 score head: side ``s`` maps to ``s / 8``."""

    def __init__(self, in_ch: int, width: int = 64, n_down: int = 3):
        super().__init__()
        layers: list[nn.Module] = []
        ch = in_ch
        for k in range(n_down):
            out = width * 2**k
            layers.append(nn.Conv2d(ch, out, 4, stride=2, padding=1))
            if k > 0:
                layers.append(InstanceNorm(out))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            ch = out
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(ch, 1, 3, padding=1)

    def forward(self, x):
        return self.head(self.body(x))


class ImageDiscriminator(PatchCritic):
    def __init__(self, width: int = 64):
        super().__init__(3, width)


class PoseDiscriminator(PatchCritic):
    def __init__(self, width: int = 64):
        super().__init__(6, width)

    def forward(self, frame, pose):
        if frame.shape != pose.shape:
            raise ValueError(f"frame {tuple(frame.shape)} and pose {tuple(pose.shape)} differ")
        return super().forward(torch.cat([frame, pose], dim=-3))


class InnerFrameDiscriminator(nn.Module):
    """Scores ``frame_t1 - frame_t``; the critic never sees raw frames."""

    def __init__(self, width: int = 64):
        super().__init__()
        self.critic = PatchCritic(3, width)

    @staticmethod
    def difference(frame_t, frame_t1):
        if frame_t.shape != frame_t1.shape:
            raise ValueError(f"frames {tuple(frame_t.shape)} and {tuple(frame_t1.shape)} differ")
        return frame_t1 - frame_t

    def forward(self, frame_t, frame_t1):
        return self.critic(self.difference(frame_t, frame_t1))

    def score_sequence(self, frames):
        """Score all ``T - 1`` adjacent pairs of a ``T x C x H x W`` sequence."""
        return self(frames[:-1], frames[1:])


class SequenceDiscriminator(nn.Module):
    def __init__(self, window: int = 3, width: int = 64):
        super().__init__()
        if window < 2:
            raise ValueError("window must be >= 2")
        self.window = window
        self.critic = PatchCritic(3 * window, width)

    def forward(self, frames):
        """``frames``: ``K x 3 x H x W`` or ``N x K x 3 x H x W``."""
        if frames.dim() == 4:
            frames = frames[None]
        if frames.shape[1] != self.window:
            raise ValueError(f"expected {self.window} frames, got {frames.shape[1]}")
        n, k, c, h, w = frames.shape
        return self.critic(frames.reshape(n, k * c, h, w))

    def windows(self, frames):
        """All ``T - K + 1`` sliding windows of a ``T x 3 x H x W`` sequence as ``N x K x 3 x H x W``."""
        t = frames.shape[0]
        if t < self.window:
            return frames.new_zeros((0, self.window, *frames.shape[1:]))
        return torch.stack([frames[i : i + self.window] for i in range(t - self.window + 1)])


class LocalDiscriminator(PatchCritic):
    def __init__(self, width: int = 32):
        super().__init__(3, width)


def disc_image(critic: ImageDiscriminator, frame):
    return critic(frame)


def disc_pose(critic: PoseDiscriminator, frame, pose):
    return critic(frame, pose)


def disc_innerframe(critic: InnerFrameDiscriminator, frame_t, frame_t1):
    return critic(frame_t, frame_t1)


def disc_sequence(critic: SequenceDiscriminator, frames):
    return critic(frames)


def disc_local(critic: LocalDiscriminator, patch: "RegionPatch"):
    if not patch.valid:
        raise ValueError("local critic called on an invalid (empty-mask) patch")
    return critic(patch.pixels[None] if patch.pixels.dim() == 3 else patch.pixels)


@dataclass
class RegionPatch:
    pixels: torch.Tensor
    region_kind: str
    valid: bool


def mask_bbox(mask: torch.Tensor) -> tuple[int, int, int, int] | None:
    """Tight ``(y0, x0, y1, x1)`` box (exclusive ends) of a mask's support, or None."""
    m = mask.reshape(mask.shape[-2:]) > 0.5
    rows = torch.nonzero(m.any(dim=1)).flatten()
    cols = torch.nonzero(m.any(dim=0)).flatten()
    if rows.numel() == 0:
        return None
    return int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1


def expand_box(box, height: int, width: int, margin: float = 0.1) -> tuple[float, float, float, float]:
    """Grow a box by ``margin`` of its size (half per side), clipped to the frame."""
    y0, x0, y1, x1 = box
    dy, dx = (y1 - y0) * margin / 2, (x1 - x0) * margin / 2
    return max(y0 - dy, 0.0), max(x0 - dx, 0.0), min(y1 + dy, float(height)), min(x1 + dx, float(width))


def crop_region(frame, mask, kind: str, size: int = 16, margin: float = 0.1, fill: float = -1.0) -> RegionPatch:
    """Bilinear crop of the masked region's expanded bounding box, resized to ``size x size``.

    Pixels outside the mask are replaced by ``fill`` so the critic sees only
    the segmented part. Differentiable with respect to ``frame``.
    """
    if kind not in REGION_KINDS:
        raise ValueError(f"unknown region kind {kind!r}")
    box = mask_bbox(mask)
    if box is None:
        return RegionPatch(frame.new_zeros((frame.shape[0], size, size)), kind, False)
    h, w = frame.shape[-2:]
    y0, x0, y1, x1 = expand_box(box, h, w, margin)
    m = mask.reshape(1, h, w).to(frame.dtype)
    seg = frame * m + fill * (1 - m)
    # sample the continuous box at size x size cell centres (align_corners=False convention)
    ys = y0 + (torch.arange(size, dtype=frame.dtype) + 0.5) * (y1 - y0) / size
    xs = x0 + (torch.arange(size, dtype=frame.dtype) + 0.5) * (x1 - x0) / size
    gy = ys / h * 2 - 1
    gx = xs / w * 2 - 1
    grid = torch.stack(torch.meshgrid(gy, gx, indexing="ij")[::-1], dim=-1)
    pixels = F.grid_sample(seg[None], grid[None], mode="bilinear", padding_mode="border", align_corners=False)[0]
    return RegionPatch(pixels, kind, True)


class Discriminators(nn.ModuleDict):
    """Container for the enabled critics, keyed ``image``, ``pose``, ``innerframe``, ``sequence``, ``local_head``, ``local_hands``."""

    def __init__(self, width: int = 64, local_width: int = 32, window: int = 3, temporal: bool = True, local: bool = True):
        critics = {"image": ImageDiscriminator(width), "pose": PoseDiscriminator(width)}
        if temporal:
            critics["innerframe"] = InnerFrameDiscriminator(width)
            critics["sequence"] = SequenceDiscriminator(window, width)
        if local:
            critics["local_head"] = LocalDiscriminator(local_width)
            critics["local_hands"] = LocalDiscriminator(local_width)
        super().__init__(critics)
