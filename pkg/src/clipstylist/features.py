"""Frozen feature extractors used by the perceptual/style losses and the Fréchet metrics.

The seeded variants are random but bit-reproducible conv stacks, so losses and
metrics work without downloading weights. A TorchScript module can be plugged
in through :class:`AdapterExtractor`.
"""

from __future__ import annotations

from pathlib import Path

import torch
import torch.nn as nn


def _frozen(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module.eval()


class FeatureExtractor(nn.Module):
    """Base class: ``forward`` returns an ordered dict of named layer activations."""

    extractor_id: str = "abstract"
    layers: tuple[str, ...] = ()

    def train(self, mode: bool = True):
        # weights stay frozen and in eval mode whatever the parent does
        return super().train(False)

    def pooled(self, x: torch.Tensor) -> torch.Tensor:
        """Global-average-pooled activations of every layer, concatenated: ``N x D``."""
        feats = self(x)
        return torch.cat([f.mean(dim=tuple(range(2, f.dim()))) for f in feats.values()], dim=1)


class SeededFeatureExtractor(FeatureExtractor):
    """Four frozen random 3x3 conv layers with ReLU; layers 2-4 downsample by 2."""

    def __init__(self, seed: int = 0, widths: tuple[int, ...] = (16, 32, 48, 64), in_ch: int = 3):
        super().__init__()
        self.seed = seed
        self.extractor_id = f"seeded:{seed}"
        gen = torch.Generator().manual_seed(seed)
        convs = []
        ch = in_ch
        for k, w in enumerate(widths):
            conv = nn.Conv2d(ch, w, 3, stride=1 if k == 0 else 2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / (ch * 9)) ** 0.5)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.1)
            convs.append(conv)
            ch = w
        self.convs = nn.ModuleList(convs)
        self.layers = tuple(f"relu{k + 1}" for k in range(len(widths)))
        _frozen(self)

    def forward(self, x):
        out = {}
        for name, conv in zip(self.layers, self.convs):
            x = torch.relu(conv(x))
            out[name] = x
        return out


class SeededVideoExtractor(FeatureExtractor):
    """Frozen random spatio-temporal conv stack over ``N x T x 3 x H x W`` clips.

    Temporal kernels of size 3 make the features sensitive to frame order.
    """

    def __init__(self, seed: int = 0, widths: tuple[int, ...] = (16, 32, 64), in_ch: int = 3):
        super().__init__()
        self.seed = seed
        self.extractor_id = f"seeded-video:{seed}"
        gen = torch.Generator().manual_seed(seed + 1_000_003)
        convs = []
        ch = in_ch
        for w in widths:
            conv = nn.Conv3d(ch, w, 3, stride=(1, 2, 2), padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / (ch * 27)) ** 0.5)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.1)
            convs.append(conv)
            ch = w
        self.convs = nn.ModuleList(convs)
        self.layers = tuple(f"relu{k + 1}" for k in range(len(widths)))
        _frozen(self)

    def forward(self, clips):
        if clips.dim() != 5:
            raise ValueError(f"expected N x T x C x H x W clips, got shape {tuple(clips.shape)}")
        x = clips.transpose(1, 2)
        out = {}
        for name, conv in zip(self.layers, self.convs):
            x = torch.relu(conv(x))
            out[name] = x
        return out


class AdapterExtractor(FeatureExtractor):
    """Wrap a TorchScript module whose forward returns a tensor or a dict of tensors."""

    def __init__(self, path: str | Path):
        super().__init__()
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"feature extractor not found: {path}")
        self.module = _frozen(torch.jit.load(str(path), map_location="cpu"))
        self.extractor_id = f"adapter:{path.name}"

    def forward(self, x):
        out = self.module(x)
        if isinstance(out, torch.Tensor):
            return {"out": out}
        return dict(out)


def make_extractor(spec: str, video: bool = False) -> FeatureExtractor:
    """Build an extractor from ``seeded:<seed>`` or ``adapter:<path>``."""
    kind, _, arg = spec.partition(":")
    if kind == "seeded":
        seed = int(arg) if arg else 0
        return SeededVideoExtractor(seed) if video else SeededFeatureExtractor(seed)
    if kind == "adapter":
        return AdapterExtractor(arg)
    raise ValueError(f"unknown extractor spec {spec!r} (expected seeded:<seed> or adapter:<path>)")
