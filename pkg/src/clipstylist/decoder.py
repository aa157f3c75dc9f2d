"""Shared decoder with skip connections, an alpha-matte head and the compositing operator."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoders import InstanceNorm, StyleFeatures


@dataclass
class GeneratorOutput:
    frame: torch.Tensor
    alpha: torch.Tensor


class UpBlock(nn.Module):
    """Concatenate the pose skip, upsample 2x (nearest), conv, norm, style affine, activation."""

    def __init__(self, in_ch: int, skip_ch: int, out_ch: int, style_dim: int | None):
        super().__init__()
        self.conv = nn.Conv2d(in_ch + skip_ch, out_ch, 3, padding=1)
        self.norm = InstanceNorm(out_ch)
        self.modulation = nn.Linear(style_dim, 2 * out_ch) if style_dim else None
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x, skip, style_vec=None):
        x = torch.cat([x, skip], dim=1)
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.norm(self.conv(x))
        if self.modulation is not None:
            gamma, beta = self.modulation(style_vec).chunk(2, dim=1)
            x = x * (1 + gamma[..., None, None]) + beta[..., None, None]
        return self.act(x)


class SharedDecoder(nn.Module):
    """Fuse pose pyramid, coarsest identity features and clothes style into ``(I_out, alpha)``.

    With ``identity_width=0`` and ``style_dim=0`` the decoder runs on the
    pose-slot pyramid alone (single-column ablation).
    """

    def __init__(self, width: int = 32, identity_width: int = 16, style_dim: int = 64, out_ch: int = 3):
        super().__init__()
        c = width
        self.identity_width = identity_width
        self.style_dim = style_dim
        bottleneck_in = 4 * c + (4 * identity_width if identity_width else 0) + (4 * c if style_dim else 0)
        self.bottleneck = nn.Sequential(
            nn.Conv2d(bottleneck_in, 4 * c, 3, padding=1), InstanceNorm(4 * c), nn.LeakyReLU(0.2, inplace=True)
        )
        sd = style_dim or None
        self.up = nn.ModuleList(
            [
                UpBlock(4 * c, 4 * c, 2 * c, sd),
                UpBlock(2 * c, 2 * c, c, sd),
                UpBlock(c, c, c, sd),
            ]
        )
        self.frame_head = nn.Conv2d(c, out_ch, 3, padding=1)
        self.alpha_head = nn.Conv2d(c, 1, 3, padding=1)

    def forward(self, pose, identity=None, style: StyleFeatures | None = None) -> GeneratorOutput:
        if len(pose) != 3:
            raise ValueError(f"expected a 3-level pose pyramid, got {len(pose)} levels")
        coarse = [pose[-1]]
        if self.identity_width:
            if identity is None or len(identity) != 3:
                raise ValueError("decoder expects a 3-level identity pyramid")
            if identity[-1].shape[-2:] != pose[-1].shape[-2:]:
                raise ValueError(
                    f"pyramid level mismatch: identity {tuple(identity[-1].shape)} vs pose {tuple(pose[-1].shape)}"
                )
            coarse.append(identity[-1])
        style_vec = None
        if self.style_dim:
            if style is None:
                raise ValueError("decoder expects clothes style features")
            smap = style.coarse
            if smap.shape[-2:] != pose[-1].shape[-2:]:
                smap = F.adaptive_avg_pool2d(smap, pose[-1].shape[-2:])
            coarse.append(smap.expand(pose[-1].shape[0], -1, -1, -1))
            style_vec = style.vector.expand(pose[-1].shape[0], -1)
        x = self.bottleneck(torch.cat(coarse, dim=1))
        for block, skip in zip(self.up, reversed(pose)):
            x = block(x, skip, style_vec)
        return GeneratorOutput(frame=torch.tanh(self.frame_head(x)), alpha=torch.sigmoid(self.alpha_head(x)))


def decode(decoder: SharedDecoder, pose, identity, style: StyleFeatures) -> GeneratorOutput:
    return decoder(pose, identity, style)


def composite(out: torch.Tensor, alpha: torch.Tensor, bg: torch.Tensor) -> torch.Tensor:
    """``alpha * out + (1 - alpha) * bg`` with alpha broadcast over channels."""
    if out.shape != bg.shape:
        if bg.dim() == out.dim() - 1 and bg.shape == out.shape[1:]:
            bg = bg.expand_as(out)
        else:
            raise ValueError(f"frame {tuple(out.shape)} and background {tuple(bg.shape)} differ")
    if alpha.shape[-2:] != out.shape[-2:] or alpha.shape[-3] != 1:
        raise ValueError(f"alpha {tuple(alpha.shape)} does not match frame {tuple(out.shape)}")
    if alpha.detach().min() < 0 or alpha.detach().max() > 1:
        raise ValueError("alpha must lie in [0, 1]")
    return alpha * out + (1 - alpha) * bg
