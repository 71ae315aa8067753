from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from mdpn.examples import build_decoherence_net, build_rotation3, rotation3_stochastic
from mdpn.model import bernoulli_pmf, build_model

GOLDEN = Path(__file__).parent / "golden"
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def rot():
    return build_rotation3()


@pytest.fixture(scope="session")
def rot_s():
    return rotation3_stochastic()


@pytest.fixture(scope="session")
def dec():
    return build_decoherence_net()


def single_server(p_arrival: float = 0.3, p_serve: float = 1.0):
    """One server state; action 0 idles, action 1 serves with probability p_serve."""
    kernel = {(0, 0): [(0, (0,), 1.0)], (0, 1): [(0, (1,), p_serve)] + ([(0, (0,), 1 - p_serve)] if p_serve < 1 else [])}
    return build_model(["on"], ["idle", "serve"], [[0, 1]], kernel, ["r"], [bernoulli_pmf(p_arrival)], 1)


def two_state(a: float, b: float):
    """Flip chain: 0 -> 1 w.p. a, 1 -> 0 w.p. b, one action; class served in state 1."""
    kernel = {
        (0, 0): [(1, (0,), a), (0, (0,), 1 - a)],
        (1, 0): [(0, (1,), b), (1, (1,), 1 - b)],
    }
    return build_model(["s0", "s1"], ["go"], [[0], [0]], kernel, ["r"], [bernoulli_pmf(0.1)], 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
