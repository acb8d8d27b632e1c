import numpy as np
import pytest

from cdpm.data import DatasetConfig, generate_dataset
from cdpm.geometry import Camera


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def simple_camera():
    # identity rotation, object 2 units in front, f = 100, principal point (64, 64)
    return Camera(np.eye(3), [0.0, 0.0, 2.0], 100.0, 100.0, 64.0, 64.0, 128, 128)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(DatasetConfig(M=12, N=64, image_size=48, seed=3))


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
