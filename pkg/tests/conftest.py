import numpy as np
import pytest

from irsswipt.channel import SystemConfig, sample_channels, sample_topology


def cn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def unit(rng, M):
    return np.exp(1j * rng.uniform(0, 2 * np.pi, M))


def scene(seed=0, de_ratio=0.5, **overrides):
    cfg = SystemConfig(**overrides)
    rng = np.random.default_rng(seed)
    topo = sample_topology(cfg, de_ratio, rng)
    return cfg, topo, sample_channels(cfg, topo, rng), rng


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
