"""Alternating critic/generator optimisation, checkpointing, logging and ablation switches."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import torch
import yaml

from .data import ClipSample, DatasetError, DatasetManifest, iter_windows, load_clip, write_png
from .decoder import composite
from .discriminators import REGION_KINDS, Discriminators
from .features import SeededFeatureExtractor
from .generator import Generator
from .losses import (
    TERMS,
    LossBreakdown,
    LossWeights,
    alpha_loss,
    breakdown,
    local_loss,
    lsgan_d_loss,
    lsgan_g_loss,
    perceptual_loss,
    pixel_loss,
    region_patches,
    style_loss,
    total_loss,
    video_loss,
)
from .metrics import config_hash

log = logging.getLogger(__name__)

ABLATIONS = {"I": "multi_branch", "II": "attention", "III": "temporal", "IV": "local"}
# fields that do not change what a step computes; excluded from the config hash
_RUN_FIELDS = {"data_root", "iterations", "checkpoint_every", "log_every", "sample_every", "deterministic"}


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(Exception):
    pass


@dataclass
class TrainConfig:
    data_root: str = ""
    frame_size: int = 64
    clip_window: int = 4
    batch_size: int = 1
    iterations: int = 2000
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    multi_branch: bool = True
    attention: bool = True
    temporal: bool = True
    local: bool = True
    seed: int = 0
    width: int = 32
    style_dim: int = 64
    critic_width: int = 64
    local_width: int = 32
    sequence_window: int = 3
    patch_size: int = 16
    extractor_seed: int = 0
    alpha_weight: float = 1.0
    checkpoint_every: int = 500
    log_every: int = 1
    sample_every: int = 500
    deterministic: bool = False

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be > 0")
        if self.frame_size <= 0 or self.frame_size % 8:
            raise ValueError(f"frame_size must be a positive multiple of 8, got {self.frame_size}")
        if self.clip_window < 2:
            raise ValueError("clip_window must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        text = path.read_text()
        raw = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
        return cls.from_dict(raw or {})

    def ablate(self, numerals: Iterable[str]) -> "TrainConfig":
        """Disable the listed ablation components (``I``..``IV``)."""
        changes = {}
        for n in numerals:
            n = n.strip().upper()
            if not n:
                continue
            if n not in ABLATIONS:
                raise ValueError(f"unknown ablation {n!r}; expected one of {', '.join(ABLATIONS)}")
            changes[ABLATIONS[n]] = False
        return replace(self, **changes)

    def hash(self) -> str:
        return config_hash({k: v for k, v in self.to_dict().items() if k not in _RUN_FIELDS})


class TrainState:
    """Networks, optimisers and RNG streams of one training run."""

    def __init__(self, config: TrainConfig):
        self.config = config
        torch.manual_seed(config.seed)
        self.generator = Generator(config.width, config.style_dim, config.multi_branch, config.attention)
        self.critics = Discriminators(
            config.critic_width, config.local_width, config.sequence_window, config.temporal, config.local
        )
        self.extractor = SeededFeatureExtractor(config.extractor_seed)
        betas = (config.beta1, config.beta2)
        self.g_opt = torch.optim.Adam(self.generator.parameters(), lr=config.lr_g, betas=betas)
        self.d_opt = torch.optim.Adam(self.critics.parameters(), lr=config.lr_d, betas=betas)
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        self.aug_rng = np.random.default_rng(seeds[0])
        self.data_rng = np.random.default_rng(seeds[1])
        self.iteration = 0
        self.history: list[dict] = []
        self.order: list[tuple[str, int]] = []
        self.cursor = 0
        self.checkpoint_path: Path | None = None

    def next_windows(self, manifest: DatasetManifest, n: int) -> list[tuple[str, int]]:
        """Draw the next ``n`` windows from a reshuffled-per-epoch window list."""
        out = []
        for _ in range(n):
            if self.cursor >= len(self.order):
                windows = list(iter_windows(manifest, self.config.clip_window))
                if not windows:
                    raise DatasetError("dataset has no window of the configured length")
                perm = self.data_rng.permutation(len(windows))
                self.order = [windows[i] for i in perm]
                self.cursor = 0
            out.append(self.order[self.cursor])
            self.cursor += 1
        return out

    def train(self, mode: bool = True):
        self.generator.train(mode)
        self.critics.train(mode)


def _set_requires_grad(module: torch.nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def _critic_losses(state: TrainState, clip: ClipSample, fake: torch.Tensor) -> dict[str, torch.Tensor]:
    """Least-squares critic losses on real frames vs (already detached) fakes."""
    cfg, critics = state.config, state.critics
    real = clip.target
    out = {
        "d_image": lsgan_d_loss(critics["image"](real), critics["image"](fake)),
        "d_pose": lsgan_d_loss(critics["pose"](real, clip.pose), critics["pose"](fake, clip.pose)),
    }
    if cfg.temporal:
        d_if = critics["innerframe"]
        out["d_innerframe"] = lsgan_d_loss(d_if.score_sequence(real), d_if.score_sequence(fake))
        d_t = critics["sequence"]
        real_w, fake_w = d_t.windows(real), d_t.windows(fake)
        if real_w.shape[0]:
            out["d_sequence"] = lsgan_d_loss(d_t(real_w), d_t(fake_w))
    if cfg.local:
        for kind, masks in zip(REGION_KINDS, (clip.mask_head, clip.mask_hands)):
            real_p = region_patches(real, masks, kind, cfg.patch_size)
            if real_p.shape[0]:
                fake_p = region_patches(fake, masks, kind, cfg.patch_size)
                critic = critics[f"local_{kind}"]
                out[f"d_local_{kind}"] = lsgan_d_loss(critic(real_p), critic(fake_p))
    return out


def _generator_terms(state: TrainState, clip: ClipSample, fake: torch.Tensor, alpha: torch.Tensor):
    cfg, critics, fx = state.config, state.critics, state.extractor
    real = clip.target
    g_image = lsgan_g_loss(critics["image"](fake))
    g_pose = lsgan_g_loss(critics["pose"](fake, clip.pose))
    r_pixel = pixel_loss(fake, real)
    r_feature = perceptual_loss(fake, real, fx)
    r_alpha = alpha_loss(alpha, clip.mask_person)
    terms = {
        "adv": g_image + g_pose,
        "r": r_pixel + r_feature + cfg.alpha_weight * r_alpha,
        "s": style_loss(fake, real, fx),
        "v": video_loss(fake, critics["sequence"], critics["innerframe"]) if cfg.temporal else fake.new_zeros(()),
        "l": (
            local_loss(
                fake,
                clip.mask_head,
                clip.mask_hands,
                {k: critics[f"local_{k}"] for k in REGION_KINDS},
                cfg.patch_size,
            )
            if cfg.local
            else fake.new_zeros(())
        ),
    }
    sub = {"g_image": g_image, "g_pose": g_pose, "r_pixel": r_pixel, "r_feature": r_feature, "r_alpha": r_alpha}
    return terms, sub


def _mean_dicts(dicts: list[dict]) -> dict:
    keys = dict.fromkeys(k for d in dicts for k in d)
    return {k: sum(d[k] for d in dicts if k in d) / sum(1 for d in dicts if k in d) for k in keys}


def _check_finite(values: dict, stage: str, iteration: int) -> None:
    for name, v in values.items():
        v = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(v):
            raise TrainingDivergedError(f"non-finite {stage} loss term {name!r} at iteration {iteration}: {v}")


def train_step(batch: list[ClipSample], state: TrainState) -> tuple[TrainState, LossBreakdown]:
    """One critic update followed by one generator update on ``batch``."""
    cfg = state.config
    if not batch:
        raise ValueError("empty batch")
    for clip in batch:
        if clip.n_frames < 2:
            raise ValueError(f"clip {clip.clip_id} has {clip.n_frames} frames; need >= 2")
    state.train(True)

    outputs = []
    for clip in batch:
        out = state.generator(clip.pose, clip.identity, clip.clothes, rng=state.aug_rng)
        outputs.append((composite(out.frame, out.alpha, clip.scenario), out.alpha))

    _set_requires_grad(state.critics, True)
    state.d_opt.zero_grad(set_to_none=True)
    d_terms = _mean_dicts([_critic_losses(state, clip, fake.detach()) for clip, (fake, _) in zip(batch, outputs)])
    _check_finite(d_terms, "critic", state.iteration)
    sum(d_terms.values()).backward()
    state.d_opt.step()

    _set_requires_grad(state.critics, False)
    state.g_opt.zero_grad(set_to_none=True)
    per_clip = [_generator_terms(state, clip, fake, alpha) for clip, (fake, alpha) in zip(batch, outputs)]
    terms = _mean_dicts([t for t, _ in per_clip])
    g_sub = _mean_dicts([s for _, s in per_clip])
    _check_finite({k: terms[k] for k in TERMS}, "generator", state.iteration)
    g_total = total_loss(terms, cfg.weights)
    if isinstance(g_total, torch.Tensor) and g_total.requires_grad:
        g_total.backward()
    state.g_opt.step()
    _set_requires_grad(state.critics, True)

    sub = {k: float(v.detach()) for k, v in {**d_terms, **g_sub}.items()}
    sub["d_total"] = float(sum(d_terms.values()).detach())
    state.iteration += 1
    return state, breakdown({k: float(terms[k].detach()) for k in TERMS}, cfg.weights, sub)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: TrainState, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "config": state.config.to_dict(),
        "config_hash": state.config.hash(),
        "generator": state.generator.state_dict(),
        "critics": state.critics.state_dict(),
        "g_opt": state.g_opt.state_dict(),
        "d_opt": state.d_opt.state_dict(),
        "meta": {
            "iteration": state.iteration,
            "seed": state.config.seed,
            "config_hash": state.config.hash(),
            "loss_tail": state.history[-50:],
        },
        "rng": {"aug": state.aug_rng.bit_generator.state, "data": state.data_rng.bit_generator.state},
        "order": state.order,
        "cursor": state.cursor,
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path, frame_size: int | None = None) -> TrainState:
    """Restore a :class:`TrainState`; ``frame_size`` guards against mismatched inputs."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
        config = TrainConfig.from_dict(blob["config"])
    except Exception as exc:  # torch.load surfaces pickle, zip and OS errors alike
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if frame_size is not None and frame_size != config.frame_size:
        raise CheckpointError(f"checkpoint {path} was trained at frame size {config.frame_size}, got {frame_size}")
    state = TrainState(config)
    try:
        state.generator.load_state_dict(blob["generator"])
        state.critics.load_state_dict(blob["critics"])
        state.g_opt.load_state_dict(blob["g_opt"])
        state.d_opt.load_state_dict(blob["d_opt"])
    except (KeyError, RuntimeError) as exc:
        raise CheckpointError(f"checkpoint {path} does not match its config: {exc}") from exc
    state.iteration = blob["meta"]["iteration"]
    state.history = list(blob["meta"].get("loss_tail", []))
    state.aug_rng.bit_generator.state = blob["rng"]["aug"]
    state.data_rng.bit_generator.state = blob["rng"]["data"]
    state.order = [tuple(w) for w in blob["order"]]
    state.cursor = blob["cursor"]
    state.checkpoint_path = path
    return state


def checkpoint_meta(path: str | Path) -> dict:
    return torch.load(Path(path), map_location="cpu", weights_only=False)["meta"]


# --------------------------------------------------------------------------
# run loop


class WindowLoader:
    """Loads clip windows, optionally prefetching a bounded number ahead on a worker thread."""

    def __init__(self, manifest: DatasetManifest, t_len: int, prefetch: int = 0):
        self.manifest = manifest
        self.t_len = t_len
        self.prefetch = prefetch
        self._pool = ThreadPoolExecutor(max_workers=1) if prefetch else None
        self._pending: dict[tuple[str, int], Future] = {}

    def load(self, key: tuple[str, int]) -> ClipSample:
        fut = self._pending.pop(key, None)
        if fut is not None:
            return fut.result()
        return load_clip(self.manifest, key[0], key[1], self.t_len)

    def hint(self, keys: list[tuple[str, int]]) -> None:
        if self._pool is None:
            return
        for key in keys[: self.prefetch]:
            if key not in self._pending:
                self._pending[key] = self._pool.submit(load_clip, self.manifest, key[0], key[1], self.t_len)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True, cancel_futures=True)


def _sample_grid(batch: list[ClipSample], state: TrainState) -> torch.Tensor:
    clip = batch[0]
    with torch.no_grad():
        state.train(False)
        out = state.generator(clip.pose, clip.identity, clip.clothes)
        state.train(True)
    comp = composite(out.frame, out.alpha, clip.scenario)
    rows = [clip.target, clip.pose, comp, out.alpha.expand_as(comp) * 2 - 1]
    return torch.cat([torch.cat(list(r), dim=-1) for r in rows], dim=-2)


def train(
    config: TrainConfig,
    out_dir: str | Path,
    resume: str | Path | None = None,
    force: bool = False,
    on_step: Callable[[int, LossBreakdown], None] | None = None,
) -> TrainState:
    """Run ``config.iterations`` steps, writing ``config.snapshot``, ``log.jsonl``,
    ``checkpoints/ckpt_%06d`` and ``samples/%06d.png`` under ``out_dir``."""
    manifest = DatasetManifest.read(config.data_root)
    if not manifest.clip_ids:
        raise DatasetError(f"dataset at {config.data_root} has no clips")
    if tuple(manifest.frame_size) != (config.frame_size, config.frame_size):
        raise DatasetError(f"dataset frame size {manifest.frame_size} != configured {config.frame_size}")
    if manifest.frames_per_clip < config.clip_window:
        raise DatasetError(f"clips have {manifest.frames_per_clip} frames, window needs {config.clip_window}")

    if config.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)

    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out_dir / "samples").mkdir(exist_ok=True)

    if resume is not None:
        state = load_checkpoint(resume)
        if state.config.hash() != config.hash() and not force:
            raise CheckpointError(
                f"checkpoint config hash {state.config.hash()} != run config hash {config.hash()}; use force to override"
            )
        state.config = replace(config)
    else:
        state = TrainState(config)
    (out_dir / "config.snapshot").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")

    loader = WindowLoader(manifest, config.clip_window, prefetch=0 if config.deterministic else 2 * config.batch_size)
    log_path = out_dir / "log.jsonl"
    mode = "a" if resume is not None else "w"
    t0 = time.perf_counter()
    last_saved = None
    try:
        with open(log_path, mode) as log_file:
            while state.iteration < config.iterations:
                keys = state.next_windows(manifest, config.batch_size)
                batch = [loader.load(k) for k in keys]
                if config.deterministic is False:
                    upcoming = state.order[state.cursor : state.cursor + config.batch_size]
                    loader.hint([tuple(k) for k in upcoming])
                _, bd = train_step(batch, state)
                it = state.iteration
                record = {"iteration": it, **bd.to_dict()}
                state.history.append(record)
                del state.history[:-50]
                if it % config.log_every == 0 or it == config.iterations:
                    log_file.write(json.dumps(record, sort_keys=True) + "\n")
                    log_file.flush()
                if on_step is not None:
                    on_step(it, bd)
                if it % config.sample_every == 0 or it == config.iterations:
                    write_png(out_dir / "samples" / f"{it:06d}.png", _sample_grid(batch, state))
                if it % config.checkpoint_every == 0 or it == config.iterations:
                    save_checkpoint(state, out_dir / "checkpoints" / f"ckpt_{it:06d}")
                    last_saved = it
                if it % 100 == 0:
                    log.info("iter %d total %.4f r %.4f (%.1fs)", it, bd.total, bd.r, time.perf_counter() - t0)
    finally:
        loader.close()
    if last_saved is None:
        save_checkpoint(state, out_dir / "checkpoints" / f"ckpt_{state.iteration:06d}")
    state.checkpoint_path = out_dir / "checkpoints" / f"ckpt_{state.iteration:06d}"
    return state


def read_log(path: str | Path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
