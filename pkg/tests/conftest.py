import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from widefov.backbone import PerceptualBackbone
from widefov.config import ModelConfig, TrainConfig

settings.register_profile(
    "ci", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ci")

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def backbone():
    return PerceptualBackbone("random", seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TOY_MODEL = ModelConfig(d=8, n_blocks=1, narrow_channels=8, backbone="random")


@pytest.fixture
def toy_cfg():
    return TrainConfig(pretrain_epochs=1, adv_epochs=1, samples_per_epoch=2, model=TOY_MODEL)


def random_image(rng, h, w):
    return rng.random((h, w, 3), dtype=np.float32)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
