"""Shared domain types, the on-disk dataset layout and a synthetic sprite-person generator.

Layout::

    <root>/manifest.json
    <root>/clips/<clip_id>/{rgb,pose,identity,mask_person,mask_head,mask_hands}/%05d.png
    <root>/clips/<clip_id>/clothes.png
    <root>/scenarios/<scenario_id>.png
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image

RGB_STREAMS = ("rgb", "pose", "identity")
MASK_STREAMS = ("mask_person", "mask_head", "mask_hands")
STREAMS = RGB_STREAMS + MASK_STREAMS
MASK_THRESHOLD = 128


class DatasetError(Exception):
    """Raised when a dataset tree is missing files or is inconsistent."""


@dataclass(frozen=True)
class DatasetManifest:
    root_path: Path
    clip_ids: list[str]
    frame_size: tuple[int, int]
    frames_per_clip: int
    scenario_ids: list[str]
    generator_seed: int | None = None
    clip_scenarios: dict[str, str] = field(default_factory=dict)

    def scenario_for(self, clip_id: str) -> str:
        if clip_id in self.clip_scenarios:
            return self.clip_scenarios[clip_id]
        return self.scenario_ids[self.clip_ids.index(clip_id) % len(self.scenario_ids)]

    def clip_dir(self, clip_id: str) -> Path:
        return self.root_path / "clips" / clip_id

    def to_json(self) -> dict:
        out = {
            "clip_ids": list(self.clip_ids),
            "frame_size": list(self.frame_size),
            "frames_per_clip": self.frames_per_clip,
            "scenario_ids": list(self.scenario_ids),
            "generator_seed": self.generator_seed,
        }
        if self.clip_scenarios:
            out["clip_scenarios"] = dict(self.clip_scenarios)
        return out

    def write(self) -> None:
        path = self.root_path / "manifest.json"
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, root: str | os.PathLike) -> "DatasetManifest":
        root = Path(root)
        path = root / "manifest.json"
        if not path.is_file():
            raise DatasetError(f"missing manifest: {path}")
        try:
            raw = json.loads(path.read_text())
            return cls(
                root_path=root,
                clip_ids=[str(c) for c in raw["clip_ids"]],
                frame_size=(int(raw["frame_size"][0]), int(raw["frame_size"][1])),
                frames_per_clip=int(raw["frames_per_clip"]),
                scenario_ids=[str(s) for s in raw["scenario_ids"]],
                generator_seed=raw.get("generator_seed"),
                clip_scenarios=dict(raw.get("clip_scenarios", {})),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise DatasetError(f"malformed manifest {path}: {exc}") from exc


@dataclass(frozen=True)
class ClipSample:
    """A time-aligned window of one clip.

    Per-frame streams are stacked along the first axis: RGB streams are
    ``T x 3 x H x W`` in [-1, 1], masks are ``T x 1 x H x W`` in {0, 1}.
    ``clothes`` and ``scenario`` are single ``3 x H x W`` images.
    """

    clip_id: str
    target: torch.Tensor
    pose: torch.Tensor
    identity: torch.Tensor
    mask_person: torch.Tensor
    mask_head: torch.Tensor
    mask_hands: torch.Tensor
    clothes: torch.Tensor
    scenario: torch.Tensor

    @property
    def n_frames(self) -> int:
        return self.target.shape[0]

    @property
    def frame_size(self) -> tuple[int, int]:
        return tuple(self.target.shape[-2:])

    @property
    def frames(self) -> list[dict[str, torch.Tensor]]:
        return [
            {
                "target": self.target[t],
                "pose": self.pose[t],
                "identity": self.identity[t],
                "mask_person": self.mask_person[t],
                "mask_head": self.mask_head[t],
                "mask_hands": self.mask_hands[t],
            }
            for t in range(self.n_frames)
        ]


def normalize_frame(image: np.ndarray, mask: bool = False) -> torch.Tensor:
    """Map an 8-bit ``H x W [x C]`` image to a ``C x H x W`` float tensor."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise TypeError(f"expected uint8 image, got {arr.dtype}")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    t = torch.from_numpy(np.array(arr.transpose(2, 0, 1)))
    if mask:
        return (t >= MASK_THRESHOLD).to(torch.float32)
    return t.to(torch.float32) / 255.0 * 2.0 - 1.0


def denormalize_frame(frame: torch.Tensor, mask: bool = False) -> np.ndarray:
    """Inverse of :func:`normalize_frame`, returning ``H x W x C`` uint8."""
    x = frame.detach().to(torch.float64).cpu()
    if mask:
        x = x.clamp(0, 1) * 255.0
    else:
        x = (x.clamp(-1, 1) + 1.0) / 2.0 * 255.0
    return x.round().to(torch.uint8).numpy().transpose(1, 2, 0)


def read_png(path: str | os.PathLike, mask: bool = False) -> torch.Tensor:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L" if mask else "RGB"))
    except OSError as exc:
        raise DatasetError(f"unreadable image {path}: {exc}") from exc
    return normalize_frame(arr, mask=mask)


def read_alpha(path: str | os.PathLike) -> torch.Tensor:
    """Read a grayscale matte as a continuous ``1 x H x W`` tensor in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    with Image.open(path) as im:
        arr = np.array(im.convert("L"))
    return torch.from_numpy(arr)[None].to(torch.float32) / 255.0


def write_png(path: str | os.PathLike, frame: torch.Tensor, mask: bool = False) -> None:
    arr = denormalize_frame(frame, mask=mask)
    if arr.shape[2] == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(arr, mode="RGB").save(path)


def list_pngs(directory: str | os.PathLike) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")


def load_clip(manifest: DatasetManifest, clip_id: str, t_start: int = 0, t_len: int | None = None) -> ClipSample:
    if clip_id not in manifest.clip_ids:
        raise DatasetError(f"unknown clip id {clip_id!r}")
    if t_len is None:
        t_len = manifest.frames_per_clip - t_start
    if t_start < 0 or t_len < 1 or t_start + t_len > manifest.frames_per_clip:
        raise ValueError(
            f"window [{t_start}, {t_start + t_len}) outside clip of {manifest.frames_per_clip} frames"
        )
    clip_dir = manifest.clip_dir(clip_id)
    streams = {}
    for name in STREAMS:
        is_mask = name in MASK_STREAMS
        frames = [read_png(clip_dir / name / f"{t:05d}.png", mask=is_mask) for t in range(t_start, t_start + t_len)]
        streams[name] = torch.stack(frames)
    sample = ClipSample(
        clip_id=clip_id,
        target=streams["rgb"],
        pose=streams["pose"],
        identity=streams["identity"],
        mask_person=streams["mask_person"],
        mask_head=streams["mask_head"],
        mask_hands=streams["mask_hands"],
        clothes=read_png(clip_dir / "clothes.png"),
        scenario=read_png(manifest.root_path / "scenarios" / f"{manifest.scenario_for(clip_id)}.png"),
    )
    if sample.frame_size != tuple(manifest.frame_size):
        raise DatasetError(f"clip {clip_id} has frame size {sample.frame_size}, manifest says {manifest.frame_size}")
    return sample


def iter_windows(manifest: DatasetManifest, t_len: int) -> Iterator[tuple[str, int]]:
    for clip_id in manifest.clip_ids:
        for t0 in range(manifest.frames_per_clip - t_len + 1):
            yield clip_id, t0


# --------------------------------------------------------------------------
# synthetic sprite people

POSE_COLORS = {
    "spine": (255, 255, 0),
    "arm_l": (255, 0, 0),
    "forearm_l": (255, 128, 0),
    "arm_r": (0, 255, 0),
    "forearm_r": (0, 255, 128),
    "leg_l": (0, 0, 255),
    "shin_l": (0, 128, 255),
    "leg_r": (255, 0, 255),
    "shin_r": (128, 0, 255),
    "joint": (255, 255, 255),
}


def _segment_dist(yy: np.ndarray, xx: np.ndarray, p: tuple[float, float], q: tuple[float, float]) -> np.ndarray:
    py, px = p
    qy, qx = q
    dy, dx = qy - py, qx - px
    denom = dy * dy + dx * dx
    if denom == 0:
        return np.hypot(yy - py, xx - px)
    s = np.clip(((yy - py) * dy + (xx - px) * dx) / denom, 0.0, 1.0)
    return np.hypot(yy - (py + s * dy), xx - (px + s * dx))


def _stripes(yy: np.ndarray, xx: np.ndarray, angle: float, period: float, c0, c1) -> np.ndarray:
    phase = (xx * math.cos(angle) + yy * math.sin(angle)) / period
    sel = (np.floor(phase).astype(np.int64) % 2 == 0)[..., None]
    return np.where(sel, np.asarray(c0, np.uint8), np.asarray(c1, np.uint8))


def _random_color(rng: np.random.Generator, lo: int = 0, hi: int = 256) -> tuple[int, int, int]:
    return tuple(int(v) for v in rng.integers(lo, hi, size=3))


def _scenario_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    a = np.asarray(_random_color(rng, 40, 200), np.float64)
    b = np.asarray(_random_color(rng, 40, 200), np.float64)
    angle = rng.uniform(0, 2 * math.pi)
    ramp = (xx * math.cos(angle) + yy * math.sin(angle)) / (size * 1.5) + 0.5
    ramp = np.clip(ramp, 0, 1)[..., None]
    img = a * (1 - ramp) + b * ramp
    kind = int(rng.integers(0, 3))
    freq = rng.uniform(2.0, 6.0) * 2 * math.pi / size
    if kind == 0:
        pattern = np.sin(xx * freq) * np.sin(yy * freq)
    elif kind == 1:
        pattern = np.sin((xx + yy) * freq)
    else:
        pattern = np.sign(np.sin(xx * freq)) * 0.5
    img = img + 25.0 * pattern[..., None]
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


@dataclass
class _Person:
    skin: tuple
    hair: tuple
    pants: tuple
    cloth_a: tuple
    cloth_b: tuple
    stripe_angle: float
    stripe_period: float
    phase: float
    period: float
    amplitude: float
    swing: float

    @classmethod
    def draw(cls, rng: np.random.Generator, size: int) -> "_Person":
        return cls(
            skin=_random_color(rng, 120, 256),
            hair=_random_color(rng, 0, 120),
            pants=_random_color(rng, 0, 160),
            cloth_a=_random_color(rng),
            cloth_b=_random_color(rng),
            stripe_angle=float(rng.uniform(0, math.pi)),
            stripe_period=float(rng.uniform(0.06, 0.18) * size),
            phase=float(rng.uniform(0, 2 * math.pi)),
            period=float(rng.uniform(10.0, 20.0)),
            amplitude=float(rng.uniform(0.05, 0.15)),
            swing=float(rng.uniform(0.3, 0.8)),
        )


def _skeleton(person: _Person, t: int, size: int) -> dict[str, tuple[float, float]]:
    s = float(size)
    w = 2 * math.pi * t / person.period + person.phase
    cx = s * (0.5 + person.amplitude * math.sin(w))
    bob = 0.01 * s * math.sin(2 * w)
    j = {
        "head": (0.19 * s + bob, cx),
        "neck": (0.29 * s + bob, cx),
        "pelvis": (0.60 * s + bob, cx),
        "shoulder_l": (0.33 * s + bob, cx - 0.11 * s),
        "shoulder_r": (0.33 * s + bob, cx + 0.11 * s),
        "hip_l": (0.60 * s + bob, cx - 0.06 * s),
        "hip_r": (0.60 * s + bob, cx + 0.06 * s),
    }

    def limb(start, angle, length):
        return (start[0] + length * math.cos(angle), start[1] + length * math.sin(angle))

    arm_l = 0.35 + person.swing * math.sin(w)
    arm_r = -0.35 - person.swing * math.sin(w + 0.7)
    j["elbow_l"] = limb(j["shoulder_l"], arm_l, 0.14 * s)
    j["wrist_l"] = limb(j["elbow_l"], arm_l + 0.4 + 0.3 * math.sin(w), 0.12 * s)
    j["elbow_r"] = limb(j["shoulder_r"], arm_r, 0.14 * s)
    j["wrist_r"] = limb(j["elbow_r"], arm_r - 0.4 - 0.3 * math.sin(w), 0.12 * s)
    leg = 0.25 * math.sin(w)
    j["knee_l"] = limb(j["hip_l"], 0.1 + leg, 0.17 * s)
    j["ankle_l"] = limb(j["knee_l"], 0.05 + leg * 0.5, 0.16 * s)
    j["knee_r"] = limb(j["hip_r"], -0.1 - leg, 0.17 * s)
    j["ankle_r"] = limb(j["knee_r"], -0.05 - leg * 0.5, 0.16 * s)
    return j


_BONES = [
    ("spine", "neck", "pelvis"),
    ("arm_l", "shoulder_l", "elbow_l"),
    ("forearm_l", "elbow_l", "wrist_l"),
    ("arm_r", "shoulder_r", "elbow_r"),
    ("forearm_r", "elbow_r", "wrist_r"),
    ("leg_l", "hip_l", "knee_l"),
    ("shin_l", "knee_l", "ankle_l"),
    ("leg_r", "hip_r", "knee_r"),
    ("shin_r", "knee_r", "ankle_r"),
]


def _render_frame(person: _Person, t: int, size: int, background: np.ndarray) -> dict[str, np.ndarray]:
    s = float(size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    j = _skeleton(person, t, size)
    rgb = background.copy()
    limb_w = 0.035 * s

    legs = np.zeros((size, size), bool)
    for name, a, b in _BONES[5:]:
        legs |= _segment_dist(yy, xx, j[a], j[b]) <= limb_w
    rgb[legs] = person.pants

    cy0, cy1 = j["neck"][0] + 0.02 * s, j["pelvis"][0]
    cx = j["neck"][1]
    torso = (yy >= cy0) & (yy <= cy1) & (np.abs(xx - cx) <= 0.11 * s)
    # texture is anchored to the torso so it moves with the body
    tex = _stripes(yy - cy0, xx - cx, person.stripe_angle, person.stripe_period, person.cloth_a, person.cloth_b)
    rgb[torso] = tex[torso]

    arms = np.zeros((size, size), bool)
    for name, a, b in _BONES[1:5]:
        arms |= _segment_dist(yy, xx, j[a], j[b]) <= limb_w
    arms &= ~torso
    rgb[arms] = person.cloth_a

    hands = np.zeros((size, size), bool)
    for w in ("wrist_l", "wrist_r"):
        hands |= np.hypot(yy - j[w][0], xx - j[w][1]) <= 0.04 * s
    rgb[hands] = person.skin

    hy, hx = j["head"]
    head = np.hypot(yy - hy, xx - hx) <= 0.085 * s
    rgb[head] = person.skin
    hair = head & (yy < hy - 0.02 * s)
    rgb[hair] = person.hair
    for ex in (hx - 0.03 * s, hx + 0.03 * s):
        eye = np.hypot(yy - (hy + 0.005 * s), xx - ex) <= max(0.012 * s, 0.6)
        rgb[eye & head] = (20, 20, 20)

    person_mask = legs | torso | arms | hands | head

    pose = np.zeros((size, size, 3), np.uint8)
    stick_w = max(0.012 * s, 0.75)
    for name, a, b in _BONES:
        pose[_segment_dist(yy, xx, j[a], j[b]) <= stick_w] = POSE_COLORS[name]
    for name in j:
        pose[np.hypot(yy - j[name][0], xx - j[name][1]) <= max(0.025 * s, 1.0)] = POSE_COLORS["joint"]

    identity = np.zeros_like(rgb)
    identity[head] = rgb[head]

    def as_mask(m):
        return (m * 255).astype(np.uint8)

    return {
        "rgb": rgb,
        "pose": pose,
        "identity": identity,
        "mask_person": as_mask(person_mask),
        "mask_head": as_mask(head),
        "mask_hands": as_mask(hands),
    }


def _save(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(arr, mode="L" if arr.ndim == 2 else "RGB").save(path)


def generate_synthetic_dataset(
    out_dir: str | os.PathLike,
    n_clips: int,
    frames_per_clip: int,
    size: int = 64,
    seed: int = 0,
    n_scenarios: int | None = None,
) -> DatasetManifest:
    """Write a deterministic dataset of articulated sprite people.

    Each clip shows one person with a per-clip striped shirt walking over a
    textured scenario. Identical arguments produce byte-identical trees.
    """
    if size <= 0 or size % 8:
        raise ValueError(f"size must be a positive multiple of 8, got {size}")
    if n_clips < 1:
        raise ValueError("n_clips must be >= 1")
    if frames_per_clip < 2:
        raise ValueError("frames_per_clip must be >= 2")
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
        probe = root / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DatasetError(f"output directory not writable: {root}: {exc}") from exc

    rng = np.random.default_rng(seed)
    if n_scenarios is None:
        n_scenarios = max(1, min(n_clips, 8))
    scenario_ids = [f"scene{i:03d}" for i in range(n_scenarios)]
    (root / "scenarios").mkdir(exist_ok=True)
    scenarios = {}
    for sid, child in zip(scenario_ids, rng.spawn(n_scenarios)):
        scenarios[sid] = _scenario_texture(child, size)
        _save(root / "scenarios" / f"{sid}.png", scenarios[sid])

    clip_ids = [f"clip{i:05d}" for i in range(n_clips)]
    clip_scenarios = {}
    for i, (cid, child) in enumerate(zip(clip_ids, rng.spawn(n_clips))):
        person = _Person.draw(child, size)
        sid = scenario_ids[int(child.integers(0, n_scenarios))]
        clip_scenarios[cid] = sid
        clip_dir = root / "clips" / cid
        for name in STREAMS:
            (clip_dir / name).mkdir(parents=True, exist_ok=True)
        for t in range(frames_per_clip):
            for name, arr in _render_frame(person, t, size, scenarios[sid]).items():
                _save(clip_dir / name / f"{t:05d}.png", arr)
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
        swatch = _stripes(yy, xx, person.stripe_angle, person.stripe_period, person.cloth_a, person.cloth_b)
        _save(clip_dir / "clothes.png", swatch)

    manifest = DatasetManifest(
        root_path=root,
        clip_ids=clip_ids,
        frame_size=(size, size),
        frames_per_clip=frames_per_clip,
        scenario_ids=scenario_ids,
        generator_seed=seed,
        clip_scenarios=clip_scenarios,
    )
    manifest.write()
    return manifest


def verify_dataset(manifest: DatasetManifest) -> None:
    """Check every clip directory holds all streams with exactly T frames."""
    for cid in manifest.clip_ids:
        clip_dir = manifest.clip_dir(cid)
        if not (clip_dir / "clothes.png").is_file():
            raise DatasetError(f"missing file: {clip_dir / 'clothes.png'}")
        for name in STREAMS:
            for t in range(manifest.frames_per_clip):
                p = clip_dir / name / f"{t:05d}.png"
                if not p.is_file():
                    raise DatasetError(f"missing file: {p}")
            extra = len(list_pngs(clip_dir / name)) - manifest.frames_per_clip
            if extra:
                raise DatasetError(f"{clip_dir / name} holds {extra} unexpected frames")
    for sid in manifest.scenario_ids:
        p = manifest.root_path / "scenarios" / f"{sid}.png"
        if not p.is_file():
            raise DatasetError(f"missing file: {p}")

