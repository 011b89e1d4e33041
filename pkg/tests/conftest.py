import re

import numpy as np
import pytest

from ringstab.analytics import ParameterSetting

TWO_CELL_Q = [[0.75, 0.75], [0.5, 0.5]]


@pytest.fixture
def two_cell():
    return ParameterSetting(2, [0.3, 0.3], TWO_CELL_Q)


def random_setting(rng, L, p_scale=1.0, zeros=0.2):
    """Random parameters with valid hazards; some q entries are exactly 0."""
    q = rng.uniform(0.05, 1.0, size=(L, L))
    q[rng.random((L, L)) < zeros] = 0.0
    for j in range(L):
        if not q[:, j].any():
            q[rng.integers(L), j] = rng.uniform(0.05, 1.0)
    p = rng.uniform(0.0, p_scale, size=L) * 0.99
    return ParameterSetting(L, p, q)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", rep.nodeid)
            if m and rep.when == "call" or (m and outcome == "error"):
                lines.append((int(m.group(1)), m.group(2), "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for n, name, verdict in sorted(lines):
            terminalreporter.write_line(f"criterion {n:2d} [{verdict}] {name.replace('_', ' ')}")
