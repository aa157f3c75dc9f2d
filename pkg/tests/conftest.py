import pytest
import torch

from clipstylist.data import generate_synthetic_dataset, load_clip
from clipstylist.training import TrainConfig

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    return generate_synthetic_dataset(root, n_clips=3, frames_per_clip=6, size=32, seed=11)


@pytest.fixture(scope="session")
def tiny_clip(tiny_dataset):
    return load_clip(tiny_dataset, tiny_dataset.clip_ids[0], 0, 4)


@pytest.fixture
def tiny_config(tiny_dataset):
    """A small-width configuration that trains in well under a second per step."""
    return TrainConfig(
        data_root=str(tiny_dataset.root_path),
        frame_size=32,
        iterations=3,
        width=8,
        style_dim=16,
        critic_width=8,
        local_width=8,
        checkpoint_every=100,
        sample_every=100,
        deterministic=True,
    )


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
