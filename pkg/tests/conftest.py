import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from admmdet.linalg import RngStream  # noqa: E402
from admmdet.mimo import DatasetSpec, SnrPolicy, SystemConfig  # noqa: E402
from admmdet.psnet import TrainConfig, train_psnet  # noqa: E402
from admmdet.hnet import train_hnet  # noqa: E402

DESK = SystemConfig(mc=16, kc=4, q=2, L=30)
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def desk_psnet():
    """Penalties trained end to end at desk scale (m=2000, 200 epochs, L=30)."""
    spec = DatasetSpec(DESK, 2000, SnrPolicy.uniform(6, 10), seed=101, stream_id=1)
    return train_psnet(spec, TrainConfig.psnet_desk(), RngStream(101, 3), L=DESK.L)


@pytest.fixture(scope="session")
def desk_hnet(desk_psnet):
    """30-layer network on the trained penalties (m=10000, 50 epochs/layer, n=64)."""
    spec = DatasetSpec(DESK, 10_000, SnrPolicy.uniform(6, 12), seed=102, stream_id=1)
    return train_hnet(spec, desk_psnet.theta, TrainConfig.hnet_desk(), n=64, L=DESK.L,
                      init_stream=RngStream(102, 3))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
