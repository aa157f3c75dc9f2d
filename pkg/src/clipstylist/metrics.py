"""Image and video quality metrics: SSIM, PSNR, FID and FVD."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .features import FeatureExtractor


def _to_unit(x) -> np.ndarray:
    """``C x H x W`` frame in [-1, 1] to float64 array in [0, 1]."""
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    return (x + 1.0) / 2.0


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Valid-mode 2-D correlation of each channel of ``C x H x W`` with ``win``."""
    k = win.shape[0]
    views = np.lib.stride_tricks.sliding_window_view(img, (k, k), axis=(-2, -1))
    return np.einsum("...ij,ij->...", views, win)


def ssim_map(a, b, window_size: int = 11, sigma: float = 1.5, data_range: float = 1.0) -> np.ndarray:
    x, y = _to_unit(a), _to_unit(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape[-2:]) < window_size:
        raise ValueError(f"image {x.shape[-2:]} smaller than the {window_size}x{window_size} window")
    win = gaussian_window(window_size, sigma)
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    mx, my = _filter_valid(x, win), _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))


def ssim(a, b, window_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over valid Gaussian windows, averaged over channels."""
    return float(ssim_map(a, b, window_size, sigma).mean())


def psnr(a, b) -> float:
    """PSNR in dB on [0, 1]-mapped images; ``inf`` for identical inputs."""
    x, y = _to_unit(a), _to_unit(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    m = (m + m.T) / 2
    vals, vecs = np.linalg.eigh(m)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """``|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))``, floored at 0.

    The trace of the product root is taken as ``Tr((S1^(1/2) S2 S1^(1/2))^(1/2))``,
    which is symmetric PSD and has the same eigenvalues.
    """
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, np.float64)), np.atleast_1d(np.asarray(mu2, np.float64))
    cov1, cov2 = np.atleast_2d(np.asarray(cov1, np.float64)), np.atleast_2d(np.asarray(cov2, np.float64))
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape or cov1.shape != (mu1.size, mu1.size):
        raise ValueError(f"dimension mismatch: mu {mu1.shape}/{mu2.shape}, cov {cov1.shape}/{cov2.shape}")
    cov1, cov2 = (cov1 + cov1.T) / 2, (cov2 + cov2.T) / 2
    s1 = _sqrtm_psd(cov1)
    inner = s1 @ cov2 @ s1
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_sqrt = float(np.sqrt(np.clip(vals, 0, None)).sum())
    diff = mu1 - mu2
    d = float(diff @ diff) + float(np.trace(cov1)) + float(np.trace(cov2)) - 2.0 * tr_sqrt
    return max(d, 0.0)


def gaussian_stats(features) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError(f"need an N x D feature matrix with N >= 2, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("feature matrix has non-finite entries")
    return f.mean(axis=0), np.cov(f, rowvar=False, ddof=1).reshape(f.shape[1], f.shape[1])


def fid(real, fake) -> float:
    """Fréchet distance between Gaussian fits of two ``N x D`` feature matrices."""
    return frechet_distance(*gaussian_stats(real), *gaussian_stats(fake))


@torch.no_grad()
def extract_features(images, fx: FeatureExtractor, batch_size: int = 64) -> np.ndarray:
    """Pooled features of a stack of images (or clips), one row per input, in input order."""
    x = images if isinstance(images, torch.Tensor) else torch.stack(list(images))
    rows = [fx.pooled(x[i : i + batch_size].float()) for i in range(0, x.shape[0], batch_size)]
    return torch.cat(rows).double().numpy()


def fvd(real_clips, fake_clips, video_fx: FeatureExtractor, batch_size: int = 16) -> float:
    """FID computed on clip-level features of ``N x T x 3 x H x W`` clip sets."""
    if len(real_clips) < 2 or len(fake_clips) < 2:
        raise ValueError("FVD needs at least 2 clips on each side")
    return fid(extract_features(real_clips, video_fx, batch_size), extract_features(fake_clips, video_fx, batch_size))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _json_float(v):
    if v is None:
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


@dataclass
class MetricReport:
    ssim: float | None = None
    psnr: float | None = None
    fid: float | None = None
    fvd: float | None = None
    n_samples: int = 0
    extractor_id: str = ""
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "ssim": _json_float(self.ssim),
            "psnr": _json_float(self.psnr),
            "fid": _json_float(self.fid),
            "fvd": _json_float(self.fvd),
            "n_samples": self.n_samples,
            "extractor_id": self.extractor_id,
            "config_hash": self.config_hash,
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_json(cls, raw: dict) -> "MetricReport":
        def num(v):
            return float(v) if v is not None else None

        return cls(
            ssim=num(raw.get("ssim")),
            psnr=num(raw.get("psnr")),
            fid=num(raw.get("fid")),
            fvd=num(raw.get("fvd")),
            n_samples=int(raw.get("n_samples", 0)),
            extractor_id=raw.get("extractor_id", ""),
            config_hash=raw.get("config_hash", ""),
        )
