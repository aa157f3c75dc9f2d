import json
import shutil

import numpy as np
import pytest
from PIL import Image

from clipstylist.cli import main
from clipstylist.data import DatasetManifest


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _png(path):
    return np.asarray(Image.open(path))


@pytest.fixture(scope="module")
def trained(tmp_path_factory, tiny_dataset):
    root = tmp_path_factory.mktemp("cli_run")
    cfg = root / "tiny.yaml"
    cfg.write_text(
        "frame_size: 32\nwidth: 8\nstyle_dim: 16\ncritic_width: 8\nlocal_width: 8\n"
        "iterations: 2\nsample_every: 100\ncheckpoint_every: 100\n"
    )
    code = main(["train", "--config", str(cfg), "--data", str(tiny_dataset.root_path), "--out", str(root / "run"),
                 "--deterministic"])
    assert code == 0
    return root, cfg


# --- synth-data ---------------------------------------------------------------


def test_synth_data_ok(tmp_path, capsys):
    code, out, _ = _run(capsys, "synth-data", "--out", tmp_path / "d", "--clips", 2, "--frames", 3, "--size", 32)
    assert code == 0
    assert "config_hash:" in out
    assert len(DatasetManifest.read(tmp_path / "d").clip_ids) == 2


def test_synth_data_bad_size(tmp_path, capsys):
    code, _, err = _run(capsys, "synth-data", "--out", tmp_path / "d", "--size", 50)
    assert code == 1 and "divisible by 8" in err


def test_synth_data_missing_out(capsys):
    code, _, err = _run(capsys, "synth-data", "--clips", 2)
    assert code == 1 and "usage" in err.lower()


def test_unknown_flag_and_command(capsys):
    assert _run(capsys, "synth-data", "--out", "x", "--bogus", 1)[0] == 1
    assert _run(capsys, "frobnicate")[0] == 1
    assert _run(capsys)[0] == 1


def test_seed_env_fallback(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CLIPSTYLIST_SEED", "5")
    _run(capsys, "synth-data", "--out", tmp_path / "a", "--clips", 1, "--frames", 2, "--size", 32)
    assert DatasetManifest.read(tmp_path / "a").generator_seed == 5
    _run(capsys, "synth-data", "--out", tmp_path / "b", "--clips", 1, "--frames", 2, "--size", 32, "--seed", 9)
    assert DatasetManifest.read(tmp_path / "b").generator_seed == 9
    monkeypatch.setenv("CLIPSTYLIST_SEED", "abc")
    assert _run(capsys, "synth-data", "--out", tmp_path / "c", "--size", 32)[0] == 1


# --- train --------------------------------------------------------------------


def test_train_default_run(trained):
    root, _ = trained
    assert (root / "run" / "checkpoints" / "ckpt_000002").is_file()
    assert (root / "run" / "config.snapshot").is_file()


def test_train_ablate_temporal(tmp_path, capsys, trained, tiny_dataset):
    _, cfg = trained
    code, out, _ = _run(capsys, "train", "--config", cfg, "--data", tiny_dataset.root_path, "--out", tmp_path,
                        "--ablate", "III", "--deterministic")
    assert code == 0 and "config_hash:" in out
    recs = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert recs and all(r["v"] == 0.0 for r in recs)


def test_train_missing_data(tmp_path, capsys):
    code, _, err = _run(capsys, "train", "--data", tmp_path / "nope", "--out", tmp_path / "run")
    assert code == 2


def test_train_bad_ablation(tmp_path, capsys, tiny_dataset):
    assert _run(capsys, "train", "--data", tiny_dataset.root_path, "--out", tmp_path, "--ablate", "IX")[0] == 1


def test_train_bad_config_key(tmp_path, capsys, tiny_dataset):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("nonsense: 1\n")
    assert _run(capsys, "train", "--config", cfg, "--data", tiny_dataset.root_path, "--out", tmp_path / "r")[0] == 1


# --- generate -----------------------------------------------------------------


def test_generate_with_and_without_background(tmp_path, capsys, trained, tiny_dataset):
    root, _ = trained
    ckpt = root / "run" / "checkpoints" / "ckpt_000002"
    clip = tiny_dataset.clip_dir(tiny_dataset.clip_ids[0])
    other = tiny_dataset.clip_dir(tiny_dataset.clip_ids[1])
    bg = tiny_dataset.root_path / "scenarios" / f"{tiny_dataset.scenario_ids[-1]}.png"
    base = ["generate", "--checkpoint", ckpt, "--pose", clip / "pose", "--identity", clip / "identity"]

    code, out, _ = _run(capsys, *base, "--clothes", clip / "clothes.png", "--background", bg, "--out", tmp_path / "a")
    assert code == 0 and "config_hash:" in out
    n = tiny_dataset.frames_per_clip
    for sub in ("out", "alpha", "composite"):
        assert len(list((tmp_path / "a" / sub).glob("*.png"))) == n
    assert (tmp_path / "a" / "composite" / "00000.png").is_file()

    code, _, _ = _run(capsys, *base, "--clothes", other / "clothes.png", "--out", tmp_path / "b")
    assert code == 0
    assert not (tmp_path / "b" / "composite").exists()
    assert not np.array_equal(_png(tmp_path / "a/out/00000.png"), _png(tmp_path / "b/out/00000.png"))


def test_generate_errors(tmp_path, capsys, trained, tiny_dataset):
    root, _ = trained
    clip = tiny_dataset.clip_dir(tiny_dataset.clip_ids[0])
    args = ["--pose", clip / "pose", "--identity", clip / "identity", "--clothes", clip / "clothes.png", "--out", tmp_path]
    assert _run(capsys, "generate", "--checkpoint", tmp_path / "missing", *args)[0] == 2
    assert _run(capsys, "generate", "--checkpoint", root / "run/checkpoints/ckpt_000002", "--pose", tmp_path / "no",
                "--identity", clip / "identity", "--clothes", clip / "clothes.png", "--out", tmp_path)[0] == 2


# --- composite ----------------------------------------------------------------


def _solid_dir(path, n, value, size=16, mode="RGB"):
    path.mkdir(parents=True)
    for t in range(n):
        shape = (size, size, 3) if mode == "RGB" else (size, size)
        Image.fromarray(np.full(shape, value, np.uint8), mode).save(path / f"{t:05d}.png")


def test_composite_contract(tmp_path, capsys):
    rng = np.random.default_rng(0)
    (tmp_path / "frames").mkdir()
    for t in range(3):
        Image.fromarray(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)).save(tmp_path / "frames" / f"{t:05d}.png")
    Image.fromarray(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)).save(tmp_path / "bg.png")
    _solid_dir(tmp_path / "white", 3, 255, mode="L")
    _solid_dir(tmp_path / "black", 3, 0, mode="L")

    code, out, _ = _run(capsys, "composite", "--frames", tmp_path / "frames", "--alphas", tmp_path / "white",
                        "--background", tmp_path / "bg.png", "--out", tmp_path / "o1")
    assert code == 0 and "config_hash:" in out
    for t in range(3):
        assert np.array_equal(_png(tmp_path / "o1" / f"{t:05d}.png"), _png(tmp_path / "frames" / f"{t:05d}.png"))

    assert _run(capsys, "composite", "--frames", tmp_path / "frames", "--alphas", tmp_path / "black",
                "--background", tmp_path / "bg.png", "--out", tmp_path / "o2")[0] == 0
    for t in range(3):
        assert np.array_equal(_png(tmp_path / "o2" / f"{t:05d}.png"), _png(tmp_path / "bg.png"))


def test_composite_count_mismatch(tmp_path, capsys):
    _solid_dir(tmp_path / "frames", 3, 10)
    _solid_dir(tmp_path / "alphas", 2, 255, mode="L")
    Image.fromarray(np.zeros((16, 16, 3), np.uint8)).save(tmp_path / "bg.png")
    code, _, _ = _run(capsys, "composite", "--frames", tmp_path / "frames", "--alphas", tmp_path / "alphas",
                      "--background", tmp_path / "bg.png", "--out", tmp_path / "o")
    assert code == 2


def test_inputs_are_not_mutated(tmp_path, capsys):
    _solid_dir(tmp_path / "frames", 2, 10)
    _solid_dir(tmp_path / "alphas", 2, 128, mode="L")
    Image.fromarray(np.zeros((16, 16, 3), np.uint8)).save(tmp_path / "bg.png")
    before = {p: p.read_bytes() for p in tmp_path.rglob("*.png")}
    _run(capsys, "composite", "--frames", tmp_path / "frames", "--alphas", tmp_path / "alphas",
         "--background", tmp_path / "bg.png", "--out", tmp_path / "o")
    assert all(p.read_bytes() == b for p, b in before.items())


# --- evaluate -----------------------------------------------------------------


def _clip_tree(tmp_path, tiny_dataset, name):
    dest = tmp_path / name
    for cid in tiny_dataset.clip_ids:
        shutil.copytree(tiny_dataset.clip_dir(cid) / "rgb", dest / cid)
    return dest


def test_evaluate_identity(tmp_path, capsys, tiny_dataset):
    real = _clip_tree(tmp_path, tiny_dataset, "real")
    code, out, _ = _run(capsys, "evaluate", "--real", real, "--fake", real, "--out", tmp_path / "report.json")
    assert code == 0
    raw = json.loads((tmp_path / "report.json").read_text())
    assert raw["ssim"] == pytest.approx(1.0)
    assert raw["psnr"] == "inf"
    assert raw["fid"] == pytest.approx(0.0, abs=1e-6)
    assert raw["fvd"] == pytest.approx(0.0, abs=1e-6)
    assert raw["extractor_id"] == "seeded:0"
    assert raw["config_hash"] and f"config_hash: {raw['config_hash']}" in out


def test_evaluate_unmatched_counts(tmp_path, capsys, tiny_dataset):
    real = _clip_tree(tmp_path, tiny_dataset, "real")
    fake = _clip_tree(tmp_path, tiny_dataset, "fake")
    next((fake / tiny_dataset.clip_ids[0]).glob("*.png")).unlink()
    assert _run(capsys, "evaluate", "--real", real, "--fake", fake, "--metrics", "ssim,psnr")[0] == 2


def test_evaluate_bad_metric_and_extractor(tmp_path, capsys, tiny_dataset):
    real = _clip_tree(tmp_path, tiny_dataset, "real")
    assert _run(capsys, "evaluate", "--real", real, "--fake", real, "--metrics", "lpips")[0] == 1
    assert _run(capsys, "evaluate", "--real", real, "--fake", real, "--extractor", "vgg")[0] == 1
    assert _run(capsys, "evaluate", "--real", real, "--fake", real, "--extractor", "adapter:/none.pt")[0] == 2
    assert _run(capsys, "evaluate", "--real", tmp_path / "none", "--fake", real)[0] == 2
