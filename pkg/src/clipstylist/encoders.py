"""Disentangled encoder branches: pose landmarks, characteristic identity and clothes style."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

N_LEVELS = 3


class InstanceNorm(nn.Module):
    """Instance norm that passes 1x1 maps through untouched (nothing to normalize)."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.InstanceNorm2d(channels, affine=True)

    def forward(self, x):
        if x.shape[-1] * x.shape[-2] == 1:
            return x
        return self.norm(x)


def check_spatial(x: torch.Tensor, multiple: int = 8) -> None:
    h, w = x.shape[-2:]
    if h <= 0 or w <= 0 or h % multiple or w % multiple:
        raise ValueError(f"spatial size {h}x{w} must be a positive multiple of {multiple}")


class ChannelGate(nn.Module):
    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        hidden = max(channels // reduction, 4)
        self.mlp = nn.Sequential(nn.Linear(2 * channels, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, channels))

    def forward(self, x):
        desc = torch.cat([x.mean(dim=(-2, -1)), x.amax(dim=(-2, -1))], dim=-1)
        return torch.sigmoid(self.mlp(desc))[..., None, None]


class SpatialGate(nn.Module):
    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, x):
        desc = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(desc))


class AttentionBlock(nn.Module):
    """Channel-then-spatial gating; output is ``x * channel_gate * spatial_gate``."""

    def __init__(self, channels: int, reduction: int = 8, kernel_size: int = 7):
        super().__init__()
        self.channel = ChannelGate(channels, reduction)
        self.spatial = SpatialGate(kernel_size)

    def gates(self, x):
        cg = self.channel(x)
        sg = self.spatial(x * cg)
        return cg, sg

    def forward(self, x):
        cg, sg = self.gates(x)
        return x * cg * sg


def attention_block(x: torch.Tensor, block: AttentionBlock) -> torch.Tensor:
    """Apply ``block`` to a single ``C x h x w`` map or a batch."""
    if x.dim() == 3:
        return block(x[None])[0]
    return block(x)


class DownBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, attention: bool = True):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)
        self.norm = InstanceNorm(out_ch)
        self.act = nn.LeakyReLU(0.2, inplace=True)
        self.attention = AttentionBlock(out_ch) if attention else None

    def forward(self, x):
        x = self.act(self.norm(self.conv(x)))
        if self.attention is not None:
            x = self.attention(x)
        return x


class PyramidEncoder(nn.Module):
    """Three stride-2 levels; level k has ``width * 2**k`` channels at 1/2**(k+1) resolution."""

    def __init__(self, in_ch: int = 3, width: int = 32, attention: bool = True):
        super().__init__()
        self.width = width
        chans = [in_ch] + [width * 2**k for k in range(N_LEVELS)]
        self.blocks = nn.ModuleList(DownBlock(chans[k], chans[k + 1], attention) for k in range(N_LEVELS))

    def forward(self, x):
        check_spatial(x)
        levels = []
        for block in self.blocks:
            x = block(x)
            levels.append(x)
        return levels


class PoseEncoder(PyramidEncoder):
    pass


class IdentityEncoder(PyramidEncoder):
    def __init__(self, in_ch: int = 3, pose_width: int = 32, attention: bool = True):
        super().__init__(in_ch, max(pose_width // 2, 1), attention)


@dataclass
class StyleFeatures:
    vector: torch.Tensor
    coarse: torch.Tensor


class ClothesEncoder(nn.Module):
    def __init__(self, in_ch: int = 3, width: int = 32, style_dim: int = 64, attention: bool = True):
        super().__init__()
        self.pyramid = PyramidEncoder(in_ch, width, attention)
        self.project = nn.Linear(width * 2 ** (N_LEVELS - 1), style_dim)

    def forward(self, clothes: torch.Tensor) -> StyleFeatures:
        coarse = self.pyramid(clothes)[-1]
        return StyleFeatures(vector=self.project(coarse.mean(dim=(-2, -1))), coarse=coarse)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def encode_pose(encoder: PoseEncoder, pose_frames: torch.Tensor) -> list[torch.Tensor]:
    """Encode a ``T x 3 x H x W`` pose sequence frame by frame."""
    return encoder(pose_frames)


def encode_identity(encoder: IdentityEncoder, identity_frames: torch.Tensor) -> list[torch.Tensor]:
    return encoder(identity_frames)


def encode_clothes(
    encoder: ClothesEncoder,
    clothes: torch.Tensor,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> StyleFeatures:
    """Encode one clothes image (``3 x H x W``) or a batch of them.

    In training mode each image first goes through
    :func:`random_geometric_transform`, which needs ``rng``.
    """
    single = clothes.dim() == 3
    x = clothes[None] if single else clothes
    if training:
        if rng is None:
            raise ValueError("training mode needs an explicit rng")
        x = torch.stack([random_geometric_transform(img, rng) for img in x])
    feats = encoder(x)
    if single:
        return StyleFeatures(feats.vector[0], feats.coarse[0])
    return feats


@dataclass(frozen=True)
class GeometricParams:
    flip: bool = False
    angle: float = 0.0
    scale: float = 1.0
    shift_x: float = 0.0
    shift_y: float = 0.0

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.angle == 0.0 and self.scale == 1.0 and self.shift_x == 0.0 and self.shift_y == 0.0

    @classmethod
    def draw(
        cls,
        rng: np.random.Generator,
        max_angle: float = 15.0,
        scale_range: tuple[float, float] = (0.8, 1.25),
        max_shift: float = 0.1,
        p_flip: float = 0.5,
    ) -> "GeometricParams":
        return cls(
            flip=bool(rng.random() < p_flip),
            angle=float(rng.uniform(-max_angle, max_angle)),
            scale=float(math.exp(rng.uniform(math.log(scale_range[0]), math.log(scale_range[1])))),
            shift_x=float(rng.uniform(-max_shift, max_shift)),
            shift_y=float(rng.uniform(-max_shift, max_shift)),
        )


def geometric_transform(img: torch.Tensor, params: GeometricParams, fill: float = -1.0) -> torch.Tensor:
    """Warp a ``C x H x W`` image by flip, rotation, isotropic scale and shift.

    Shifts are fractions of the image side; uncovered pixels get ``fill``.
    """
    if params.is_identity:
        return img.clone()
    theta = math.radians(params.angle)
    cos, sin = math.cos(theta), math.sin(theta)
    flip = -1.0 if params.flip else 1.0
    # affine_grid maps output coords to input coords, so invert the forward warp
    inv = 1.0 / params.scale
    mat = torch.tensor(
        [
            [flip * cos * inv, flip * sin * inv, 0.0],
            [-sin * inv, cos * inv, 0.0],
        ],
        dtype=img.dtype,
    )
    shift = torch.tensor([params.shift_x * 2.0, params.shift_y * 2.0], dtype=img.dtype)
    mat[:, 2] = -(mat[:, :2] @ shift)
    grid = F.affine_grid(mat[None], [1, *img.shape], align_corners=False)
    warped = F.grid_sample(img[None] - fill, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    return (warped[0] + fill).clamp(min(fill, img.min().item()), max(img.max().item(), fill))


def random_geometric_transform(img: torch.Tensor, rng: np.random.Generator, fill: float = -1.0) -> torch.Tensor:
    return geometric_transform(img, GeometricParams.draw(rng), fill=fill)
