"""Input validation helpers shared by the estimator, CLI and tests."""

from __future__ import annotations

import numpy as np
import torch

from .data import ClipSample


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.detach().to(torch.float32)
    return torch.as_tensor(np.asarray(x), dtype=torch.float32)


def check_frame(x, kind: str = "rgb", multiple: int = 8) -> torch.Tensor:
    """Validate a ``C x H x W`` frame (or ``T x C x H x W`` stack) and return it as float32.

    ``kind="rgb"`` requires values in [-1, 1], ``"mask"`` binary {0, 1},
    ``"alpha"`` values in [0, 1].
    """
    t = as_tensor(x)
    if t.dim() not in (3, 4):
        raise ValueError(f"expected C x H x W or T x C x H x W, got shape {tuple(t.shape)}")
    h, w = t.shape[-2:]
    if h <= 0 or w <= 0 or h % multiple or w % multiple:
        raise ValueError(f"frame size {h}x{w} must be a positive multiple of {multiple}")
    if not torch.isfinite(t).all():
        raise ValueError("frame has non-finite entries")
    if kind == "rgb":
        if t.shape[-3] != 3:
            raise ValueError(f"RGB frame must have 3 channels, got {t.shape[-3]}")
        if t.min() < -1 or t.max() > 1:
            raise ValueError("RGB frame values must lie in [-1, 1]")
    elif kind == "mask":
        if not torch.all((t == 0) | (t == 1)):
            raise ValueError("mask must be binary {0, 1}")
    elif kind == "alpha":
        if t.min() < 0 or t.max() > 1:
            raise ValueError("alpha must lie in [0, 1]")
    else:
        raise ValueError(f"unknown frame kind {kind!r}")
    return t


def check_clip_sample(clip: ClipSample) -> ClipSample:
    """Assert the structural invariants of a loaded clip window."""
    t = clip.n_frames
    if t < 2:
        raise ValueError(f"clip {clip.clip_id} has {t} frames; need >= 2")
    for name in ("target", "pose", "identity"):
        x = check_frame(getattr(clip, name))
        if x.shape[0] != t or x.shape[-2:] != clip.target.shape[-2:]:
            raise ValueError(f"stream {name} has shape {tuple(x.shape)}")
    masks = {}
    for name in ("mask_person", "mask_head", "mask_hands"):
        m = check_frame(getattr(clip, name), "mask")
        if m.shape != (t, 1, *clip.target.shape[-2:]):
            raise ValueError(f"stream {name} has shape {tuple(m.shape)}")
        masks[name] = m
    for name in ("mask_head", "mask_hands"):
        if torch.any(masks[name] > masks["mask_person"]):
            raise ValueError(f"{name} is not contained in mask_person")
    check_frame(clip.clothes)
    check_frame(clip.scenario)
    return clip
