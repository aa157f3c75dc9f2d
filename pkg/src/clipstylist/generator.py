"""Full generator: encoder branches feeding the shared decoder."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .decoder import GeneratorOutput, SharedDecoder, composite
from .encoders import (
    ClothesEncoder,
    IdentityEncoder,
    PoseEncoder,
    PyramidEncoder,
    StyleFeatures,
    random_geometric_transform,
)


class Generator(nn.Module):
    """Maps (pose, identity, clothes) to a frame and an alpha matte.

    ``multi_branch=False`` replaces the three branches by one encoder over the
    channel-concatenated inputs. ``attention=False`` drops every attention block.
    """

    def __init__(self, width: int = 32, style_dim: int = 64, multi_branch: bool = True, attention: bool = True):
        super().__init__()
        self.width = width
        self.style_dim = style_dim
        self.multi_branch = multi_branch
        self.attention = attention
        if multi_branch:
            self.pose_encoder = PoseEncoder(3, width, attention)
            self.identity_encoder = IdentityEncoder(3, width, attention)
            self.clothes_encoder = ClothesEncoder(3, width, style_dim, attention)
            self.decoder = SharedDecoder(width, self.identity_encoder.width, style_dim)
        else:
            self.encoder = PyramidEncoder(9, width, attention)
            self.decoder = SharedDecoder(width, identity_width=0, style_dim=0)

    def encode_style(self, clothes: torch.Tensor, rng: np.random.Generator | None = None) -> StyleFeatures:
        """Encode a single ``3 x H x W`` clothes image; augment when ``rng`` is given."""
        x = clothes[None]
        if rng is not None:
            x = random_geometric_transform(clothes, rng)[None]
        return self.clothes_encoder(x)

    def forward(self, pose, identity, clothes, rng: np.random.Generator | None = None) -> GeneratorOutput:
        """``pose``/``identity``: ``T x 3 x H x W``; ``clothes``: ``3 x H x W`` shared by all frames.

        ``rng`` enables the geometric regularizer on the clothes image.
        """
        if pose.shape != identity.shape:
            raise ValueError(f"pose {tuple(pose.shape)} and identity {tuple(identity.shape)} differ")
        if self.multi_branch:
            style = self.encode_style(clothes, rng)
            return self.decoder(self.pose_encoder(pose), self.identity_encoder(identity), style)
        if rng is not None:
            clothes = random_geometric_transform(clothes, rng)
        x = torch.cat([pose, identity, clothes.expand(pose.shape[0], -1, -1, -1)], dim=1)
        return self.decoder(self.encoder(x))

    def generate(self, pose, identity, clothes, background=None, rng=None):
        """Return ``(frame, alpha, composite_or_None)``."""
        out = self(pose, identity, clothes, rng)
        comp = composite(out.frame, out.alpha, background) if background is not None else None
        return out.frame, out.alpha, comp
