import numpy as np
import pytest

from gtf.analytic import demo_world
from gtf.diffusion import build_schedule
from gtf.mlp import Mlp, MlpSpec, TrainConfig, train

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


@pytest.fixture
def record_criterion():
    def record(number, name, passed, detail):
        ACCEPTANCE_RESULTS[number] = (name, bool(passed), detail)

    return record


@pytest.fixture(scope="session")
def trained_demo():
    """One training run on the demo world shared by the learned-denoiser tests."""
    world = demo_world()
    sched = build_schedule()
    net = Mlp.init(MlpSpec(condition_count=len(world.conditions)), world.conditions, sched.T, seed=0)
    result = train(net, world, sched, TrainConfig(epochs=30, seed=0))
    return world, sched, result


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        name, passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {name}: {detail}")
