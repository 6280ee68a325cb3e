import os

import numpy as np
import pytest
from hypothesis import settings

from sa_lab.noise import MarkovChainSpec

settings.register_profile("lab", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("lab")

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURES = os.path.join(ROOT, "fixtures")


def fixture_path(name):
    return os.path.join(FIXTURES, name)


def random_hurwitz(gen, d):
    """Hurwitz matrix with spectrum in the open right half-plane."""
    M = gen.normal(size=(d, d))
    shift = max(0.0, -np.linalg.eigvals(M).real.min()) + gen.uniform(0.1, 2.0)
    return M + shift * np.eye(d)


def random_chain(gen, S):
    P = gen.uniform(0.0, 1.0, size=(S, S)) + 0.05
    P /= P.sum(axis=1, keepdims=True)
    init = gen.dirichlet(np.ones(S))
    return MarkovChainSpec(P, init)


TWO_STATE = MarkovChainSpec(np.array([[0.9, 0.1], [0.2, 0.8]]), np.array([0.5, 0.5]))


@pytest.fixture
def two_state():
    return TWO_STATE


@pytest.fixture
def announce(request):
    """Print an acceptance line now and again in the terminal summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(line):
        lines.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
