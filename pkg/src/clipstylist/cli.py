"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import torch

from .data import DatasetError, generate_synthetic_dataset, list_pngs, read_alpha, read_png, write_png
from .decoder import composite
from .features import make_extractor
from .metrics import MetricReport, config_hash, extract_features, fid, fvd, psnr, ssim
from .training import CheckpointError, TrainConfig, TrainingDivergedError, load_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
SEED_ENV = "CLIPSTYLIST_SEED"
METRICS = ("ssim", "psnr", "fid", "fvd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().strip()}\n{self.prog}: error: {message}")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _print_hash(h: str) -> None:
    print(f"config_hash: {h}")


def cmd_synth_data(args) -> int:
    if args.size <= 0 or args.size % 8:
        raise UsageError(f"--size must be a positive multiple of 8 (divisible by 8), got {args.size}")
    if args.clips < 1 or args.frames < 2:
        raise UsageError("--clips must be >= 1 and --frames >= 2")
    seed = args.seed if args.seed is not None else _default_seed()
    _print_hash(config_hash({"clips": args.clips, "frames": args.frames, "size": args.size, "seed": seed}))
    manifest = generate_synthetic_dataset(args.out, args.clips, args.frames, args.size, seed)
    print(f"wrote {len(manifest.clip_ids)} clips to {manifest.root_path}")
    return EXIT_OK


def _load_train_config(args) -> TrainConfig:
    raw = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            raw = TrainConfig.from_file(path).to_dict()
        except (ValueError, TypeError) as exc:
            raise UsageError(f"invalid config {path}: {exc}") from exc
    raw["data_root"] = args.data
    if args.iterations is not None:
        raw["iterations"] = args.iterations
    if args.seed is not None:
        raw["seed"] = args.seed
    elif not args.config:
        raw["seed"] = _default_seed()
    if args.deterministic:
        raw["deterministic"] = True
    try:
        config = TrainConfig.from_dict(raw)
        if args.ablate:
            config = config.ablate(args.ablate.split(","))
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    return config


def cmd_train(args) -> int:
    config = _load_train_config(args)
    if not Path(args.data).is_dir():
        raise DatasetError(f"data directory not found: {args.data}")
    _print_hash(config.hash())
    state = train(config, args.out, resume=args.resume, force=args.force)
    print(f"finished {state.iteration} iterations; checkpoint {state.checkpoint_path}")
    return EXIT_OK


def _read_dir(directory, what: str) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"{what} directory not found: {d}")
    files = list_pngs(d)
    if not files:
        raise DatasetError(f"{what} directory has no PNG frames: {d}")
    return files


def cmd_generate(args) -> int:
    pose_files = _read_dir(args.pose, "pose")
    id_files = _read_dir(args.identity, "identity")
    if len(pose_files) != len(id_files):
        raise DatasetError(f"{len(pose_files)} pose frames but {len(id_files)} identity frames")
    pose = torch.stack([read_png(p) for p in pose_files])
    identity = torch.stack([read_png(p) for p in id_files])
    clothes = read_png(args.clothes)
    background = read_png(args.background) if args.background else None
    if pose.shape[-2:] != identity.shape[-2:] or clothes.shape[-2:] != pose.shape[-2:]:
        raise DatasetError("pose, identity and clothes images must share one frame size")
    if background is not None and background.shape != pose.shape[1:]:
        raise DatasetError(f"background {tuple(background.shape)} does not match frames {tuple(pose.shape[1:])}")
    state = load_checkpoint(args.checkpoint, frame_size=pose.shape[-1])
    _print_hash(state.config.hash())
    gen = state.generator.eval()
    out_dir = Path(args.out)
    for sub in ("out", "alpha") + (("composite",) if background is not None else ()):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        out = gen(pose, identity, clothes)
    for t in range(pose.shape[0]):
        write_png(out_dir / "out" / f"{t:05d}.png", out.frame[t])
        write_png(out_dir / "alpha" / f"{t:05d}.png", out.alpha[t], mask=True)
        if background is not None:
            write_png(out_dir / "composite" / f"{t:05d}.png", composite(out.frame[t], out.alpha[t], background))
    print(f"wrote {pose.shape[0]} frames to {out_dir}")
    return EXIT_OK


def cmd_composite(args) -> int:
    frames = _read_dir(args.frames, "frames")
    alphas = _read_dir(args.alphas, "alpha")
    if len(frames) != len(alphas):
        raise DatasetError(f"{len(frames)} frames but {len(alphas)} alpha mattes")
    background = read_png(args.background)
    _print_hash(config_hash({"command": "composite", "n": len(frames)}))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t, (fp, ap) in enumerate(zip(frames, alphas)):
        frame, alpha = read_png(fp), read_alpha(ap)
        if frame.shape != background.shape or alpha.shape[-2:] != frame.shape[-2:]:
            raise DatasetError(f"size mismatch at {fp.name}: frame {tuple(frame.shape)}, alpha {tuple(alpha.shape)}")
        write_png(out_dir / f"{t:05d}.png", composite(frame, alpha, background))
    print(f"wrote {len(frames)} composites to {out_dir}")
    return EXIT_OK


def _load_clips(directory, clip_len: int, what: str) -> list[torch.Tensor]:
    """Clips from per-clip subdirectories, or consecutive chunks of a flat frame directory."""
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"{what} directory not found: {d}")
    subdirs = sorted(p for p in d.iterdir() if p.is_dir())
    if subdirs:
        return [torch.stack([read_png(f) for f in _read_dir(s, what)]) for s in subdirs]
    frames = [read_png(f) for f in _read_dir(d, what)]
    if len(frames) < clip_len:
        return [torch.stack(frames)]
    return [torch.stack(frames[i : i + clip_len]) for i in range(0, len(frames) - clip_len + 1, clip_len)]


def cmd_evaluate(args) -> int:
    wanted = [m.strip().lower() for m in args.metrics.split(",") if m.strip()]
    bad = [m for m in wanted if m not in METRICS]
    if bad or not wanted:
        raise UsageError(f"--metrics must list some of {','.join(METRICS)}; got {args.metrics!r}")
    try:
        fx = make_extractor(args.extractor)
        vfx = make_extractor(args.extractor, video=True)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    except FileNotFoundError as exc:
        raise DatasetError(str(exc)) from exc
    h = config_hash({"metrics": wanted, "extractor": args.extractor, "clip_len": args.clip_len})
    _print_hash(h)

    real_clips = _load_clips(args.real, args.clip_len, "real")
    fake_clips = _load_clips(args.fake, args.clip_len, "fake")
    real = torch.cat(real_clips)
    fake = torch.cat(fake_clips)
    report = MetricReport(extractor_id=args.extractor, config_hash=h)
    if {"ssim", "psnr"} & set(wanted):
        if real.shape != fake.shape:
            raise DatasetError(f"paired metrics need matching frame sets: real {tuple(real.shape)}, fake {tuple(fake.shape)}")
    report.n_samples = int(fake.shape[0])
    if "ssim" in wanted:
        report.ssim = float(sum(ssim(a, b) for a, b in zip(fake, real)) / len(real))
    if "psnr" in wanted:
        report.psnr = float(sum(psnr(a, b) for a, b in zip(fake, real)) / len(real))
    if "fid" in wanted:
        if real.shape[0] < 2 or fake.shape[0] < 2:
            raise DatasetError("FID needs at least 2 images on each side")
        report.fid = fid(extract_features(real, fx), extract_features(fake, fx))
    if "fvd" in wanted:
        if len(real_clips) < 2 or len(fake_clips) < 2:
            raise DatasetError("FVD needs at least 2 clips on each side")
        if len({c.shape for c in real_clips + fake_clips}) != 1:
            raise DatasetError("FVD needs clips of one common length and size")
        report.fvd = fvd(torch.stack(real_clips), torch.stack(fake_clips), vfx)
    payload = json.dumps(report.to_json(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(payload + "\n")
    print(payload)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clipstylist", description="Scenario-aware clothes-style-transfer person video generation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("synth-data", help="write a synthetic sprite-person dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=200)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the generator and critics")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--ablate", default="", help="comma list of I,II,III,IV components to disable")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="render frames, mattes and composites from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--identity", required=True)
    p.add_argument("--clothes", required=True)
    p.add_argument("--background")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("composite", help="composite stored frames over a background using stored mattes")
    p.add_argument("--frames", required=True)
    p.add_argument("--alphas", required=True)
    p.add_argument("--background", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_composite)

    p = sub.add_parser("evaluate", help="compute SSIM/PSNR/FID/FVD between real and generated frames")
    p.add_argument("--real", required=True)
    p.add_argument("--fake", required=True)
    p.add_argument("--metrics", default="ssim,psnr,fid,fvd")
    p.add_argument("--extractor", default="seeded:0")
    p.add_argument("--clip-len", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
