import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from clipstylist import ClothesVideoGenerator
from clipstylist.data import load_clip

TINY = dict(iterations=2, width=8, style_dim=16, critic_width=8, local_width=8, deterministic=True)


@pytest.fixture(scope="module")
def fitted(tiny_dataset, tmp_path_factory):
    return ClothesVideoGenerator(**TINY, run_dir=str(tmp_path_factory.mktemp("est"))).fit(tiny_dataset.root_path)


def test_params_round_trip():
    est = ClothesVideoGenerator(lambda_s=10.0, temporal=False)
    params = est.get_params()
    assert params["lambda_s"] == 10.0 and params["temporal"] is False
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(lambda_r=1.0)
    assert est.get_params()["lambda_r"] == 1.0


def test_unfitted_predict_raises(tiny_clip):
    with pytest.raises(NotFittedError):
        ClothesVideoGenerator().predict(tiny_clip.pose, tiny_clip.identity, tiny_clip.clothes)


def test_fit_predict(fitted, tiny_clip):
    assert fitted.n_iter_ == 2
    assert (fitted.run_dir_ / "checkpoints" / "ckpt_000002").is_file()
    frames = fitted.predict(tiny_clip.pose, tiny_clip.identity, tiny_clip.clothes)
    assert frames.shape == (4, 3, 32, 32)
    assert frames.min() >= -1 and frames.max() <= 1
    out = fitted.transform(tiny_clip.pose, tiny_clip.identity, tiny_clip.clothes)
    assert out.alpha.shape == (4, 1, 32, 32)
    comp = fitted.predict(tiny_clip.pose, tiny_clip.identity, tiny_clip.clothes, background=tiny_clip.scenario)
    assert comp.shape == frames.shape and not np.array_equal(comp, frames)


def test_predict_rejects_bad_inputs(fitted, tiny_clip):
    with pytest.raises(ValueError):
        fitted.predict(tiny_clip.pose * 3, tiny_clip.identity, tiny_clip.clothes)
    with pytest.raises(ValueError):
        fitted.predict(tiny_clip.pose[..., :16, :16], tiny_clip.identity[..., :16, :16], tiny_clip.clothes[..., :16, :16])


def test_from_checkpoint_matches(fitted, tiny_clip):
    again = ClothesVideoGenerator.from_checkpoint(fitted.run_dir_ / "checkpoints" / "ckpt_000002")
    a = fitted.predict(tiny_clip.pose, tiny_clip.identity, tiny_clip.clothes)
    b = again.predict(tiny_clip.pose, tiny_clip.identity, tiny_clip.clothes)
    assert np.array_equal(a, b)
    assert again.config_hash_ == fitted.config_hash_


def test_score_is_ssim(fitted, tiny_dataset):
    s = fitted.score(tiny_dataset)
    assert -1 <= s <= 1
    clip = load_clip(tiny_dataset, tiny_dataset.clip_ids[0])
    assert fitted.predict_clip(clip).shape == (6, 3, 32, 32)
