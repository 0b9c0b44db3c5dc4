import numpy as np
import pytest

from evosynth import nn


def random_conv_net(seed, dtype=np.float64, keep=0.7):
    """Small conv net with stride, padding, upsample and a skip concat."""
    rng = np.random.default_rng(seed)
    layers = [
        nn.conv2d(2, 3, 3, stride=2, padding=1, activation="relu"),
        nn.conv2d(3, 4, 3, padding=1, activation="sigmoid"),
        nn.upsample(2),
        nn.concat(-1),
        nn.conv2d(6, 1, 3, padding=1, activation="sigmoid"),
    ]
    arch = nn.Architecture.full((2, 6, 6), layers)
    for m in arch.masks:
        if m.size:
            m[...] = rng.random(m.shape) < keep
    net = nn.initialize(arch, seed, dtype=dtype)
    for b in net.biases:
        b[...] = rng.normal(scale=0.1, size=b.shape)
    return net


def random_dense_net(seed, sizes=(4, 6, 5, 2), dtype=np.float64, keep=0.7, acts=None):
    rng = np.random.default_rng(seed)
    acts = acts or ["relu"] * (len(sizes) - 2) + ["sigmoid"]
    layers = [nn.dense(a, b, f) for a, b, f in zip(sizes[:-1], sizes[1:], acts)]
    arch = nn.Architecture.full((sizes[0],), layers)
    for m in arch.masks:
        m[...] = rng.random(m.shape) < keep
    net = nn.initialize(arch, seed, dtype=dtype)
    for b in net.biases:
        b[...] = rng.normal(scale=0.1, size=b.shape)
    return net


@pytest.fixture
def conv_net():
    return random_conv_net(0)


@pytest.fixture
def dense_net():
    return random_dense_net(0)


# -- acceptance summary ---------------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
