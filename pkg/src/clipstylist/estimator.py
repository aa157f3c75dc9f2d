"""scikit-learn style front end: ``fit`` trains on a dataset, ``predict``/``transform`` generate frames."""

from __future__ import annotations

import tempfile
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import ClipSample, DatasetManifest, load_clip
from .decoder import GeneratorOutput, composite
from .losses import LossWeights
from .metrics import ssim
from .training import TrainConfig, TrainState, load_checkpoint, train
from .validation import check_frame


class ClothesVideoGenerator(BaseEstimator):
    """Pose-driven person video generator with clothes and scenario swap.

    Hyper-parameters mirror :class:`~clipstylist.training.TrainConfig`, with
    the loss weights flattened to ``lambda_*``.
    """

    def __init__(
        self,
        iterations: int = 2000,
        clip_window: int = 4,
        batch_size: int = 1,
        lr_g: float = 2e-4,
        lr_d: float = 2e-4,
        beta1: float = 0.5,
        beta2: float = 0.999,
        lambda_adv: float = 1.0,
        lambda_r: float = 5.0,
        lambda_s: float = 50.0,
        lambda_v: float = 1.5,
        lambda_l: float = 2.0,
        multi_branch: bool = True,
        attention: bool = True,
        temporal: bool = True,
        local: bool = True,
        width: int = 32,
        style_dim: int = 64,
        critic_width: int = 64,
        local_width: int = 32,
        seed: int = 0,
        deterministic: bool = False,
        run_dir: str | None = None,
    ):
        self.iterations = iterations
        self.clip_window = clip_window
        self.batch_size = batch_size
        self.lr_g = lr_g
        self.lr_d = lr_d
        self.beta1 = beta1
        self.beta2 = beta2
        self.lambda_adv = lambda_adv
        self.lambda_r = lambda_r
        self.lambda_s = lambda_s
        self.lambda_v = lambda_v
        self.lambda_l = lambda_l
        self.multi_branch = multi_branch
        self.attention = attention
        self.temporal = temporal
        self.local = local
        self.width = width
        self.style_dim = style_dim
        self.critic_width = critic_width
        self.local_width = local_width
        self.seed = seed
        self.deterministic = deterministic
        self.run_dir = run_dir

    def _config(self, data_root: str, frame_size: int) -> TrainConfig:
        params = self.get_params()
        weights = LossWeights(**{k: params.pop(k) for k in list(params) if k.startswith("lambda_")})
        params.pop("run_dir")
        known = {f.name for f in fields(TrainConfig)}
        return TrainConfig(
            data_root=data_root,
            frame_size=frame_size,
            weights=weights,
            checkpoint_every=max(self.iterations, 1),
            sample_every=max(self.iterations, 1),
            **{k: v for k, v in params.items() if k in known},
        )

    def fit(self, X, y=None):
        """Train on a dataset root path or :class:`DatasetManifest`."""
        manifest = X if isinstance(X, DatasetManifest) else DatasetManifest.read(X)
        config = self._config(str(manifest.root_path), manifest.frame_size[0])
        run_dir = self.run_dir or tempfile.mkdtemp(prefix="clipstylist-")
        self._set_state(train(config, run_dir))
        self.run_dir_ = Path(run_dir)
        return self

    def _set_state(self, state: TrainState) -> None:
        self.state_ = state
        self.generator_ = state.generator.eval()
        self.frame_size_ = state.config.frame_size
        self.config_hash_ = state.config.hash()
        self.n_iter_ = state.iteration

    @classmethod
    def from_checkpoint(cls, path) -> "ClothesVideoGenerator":
        state = load_checkpoint(path)
        cfg = state.config
        est = cls(
            iterations=cfg.iterations,
            clip_window=cfg.clip_window,
            multi_branch=cfg.multi_branch,
            attention=cfg.attention,
            temporal=cfg.temporal,
            local=cfg.local,
            width=cfg.width,
            style_dim=cfg.style_dim,
            critic_width=cfg.critic_width,
            local_width=cfg.local_width,
            seed=cfg.seed,
            **{f"lambda_{t}": cfg.weights.for_term(t) for t in ("adv", "r", "s", "v", "l")},
        )
        est._set_state(state)
        return est

    @torch.no_grad()
    def transform(self, pose, identity, clothes) -> GeneratorOutput:
        """Generate ``(frame, alpha)`` for ``T x 3 x H x W`` pose and identity stacks and one clothes image."""
        check_is_fitted(self, "generator_")
        pose = check_frame(pose)
        identity = check_frame(identity)
        clothes = check_frame(clothes)
        if pose.dim() == 3:
            pose, identity = pose[None], identity[None]
        if pose.shape[-1] != self.frame_size_ or pose.shape[-2] != self.frame_size_:
            raise ValueError(f"model was trained at {self.frame_size_}px, got {tuple(pose.shape[-2:])}")
        self.generator_.eval()
        return self.generator_(pose, identity, clothes)

    def predict(self, pose, identity, clothes, background=None) -> np.ndarray:
        """Generated frames in [-1, 1] as ``T x 3 x H x W``; composited over ``background`` when given."""
        out = self.transform(pose, identity, clothes)
        frames = out.frame
        if background is not None:
            frames = composite(frames, out.alpha, check_frame(background))
        return frames.numpy()

    def predict_clip(self, clip: ClipSample, clothes=None, background=None) -> np.ndarray:
        clothes = clip.clothes if clothes is None else clothes
        background = clip.scenario if background is None else background
        return self.predict(clip.pose, clip.identity, clothes, background)

    def score(self, X, y=None) -> float:
        """Mean SSIM of reconstructed clips against their ground truth."""
        manifest = X if isinstance(X, DatasetManifest) else DatasetManifest.read(X)
        values = []
        for cid in manifest.clip_ids:
            clip = load_clip(manifest, cid)
            fake = self.predict_clip(clip)
            values.extend(ssim(f, r) for f, r in zip(fake, clip.target.numpy()))
        return float(np.mean(values))

