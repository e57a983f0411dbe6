import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from simguard.graph import AttributedGraph  # noqa: E402
from simguard.synth import SynthSpec, make_synthetic_graph  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_graph():
    """Six nodes: a triangle, a path tail and one isolated node."""
    x = np.arange(24, dtype=np.float64).reshape(6, 4) % 5 + 1.0
    edges = [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4)]
    return AttributedGraph(x, edges, [0, 1, 0, 1, -1, 2])


@pytest.fixture(scope="session")
def small_synth():
    return make_synthetic_graph(SynthSpec(n_nodes=400, d_feat=40, seed=5))
