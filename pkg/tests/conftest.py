import numpy as np
import pytest

from tubeil.demo import collect_nominal_demo, nominal_dataset
from tubeil.lqr import origin_gain
from tubeil.mlp import TrainConfig, train
from tubeil.mpc import MpcConfig


@pytest.fixture(scope="session")
def mpc_cfg():
    return MpcConfig()


@pytest.fixture(scope="session")
def demo_traj(mpc_cfg):
    return collect_nominal_demo((3.0, 0.0, 0.0, 0.0), 100, mpc_cfg)


@pytest.fixture(scope="session")
def gain():
    return origin_gain()


@pytest.fixture(scope="session")
def nominal_net(demo_traj):
    ds = nominal_dataset(demo_traj)
    w, _ = train(ds.states, ds.labels, TrainConfig())
    return w


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
