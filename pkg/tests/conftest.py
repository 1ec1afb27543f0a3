"""Shared fixtures: small hand-checkable complexes."""

import numpy as np
import pytest

from cellot.complexes import CWComplex


@pytest.fixture
def p2():
    """Path on two vertices, unit weights: one edge with boundary (+1, -1)."""
    return CWComplex(1, [2, 1], [np.array([[1], [-1]])],
                     [np.ones(2), np.ones(1)])


@pytest.fixture
def p2_edge4():
    """Same path with edge weight 4."""
    return CWComplex(1, [2, 1], [np.array([[1], [-1]])],
                     [np.ones(2), np.array([4.0])])


@pytest.fixture
def isolated_pair():
    """Two isolated vertices (no edges)."""
    return CWComplex(0, [2], [], [np.ones(2)])


@pytest.fixture
def filled_triangle():
    """Three vertices, three edges, one filled 2-cell."""
    b1 = np.array([
        [-1, -1, 0],
        [1, 0, -1],
        [0, 1, 1],
    ])
    b2 = np.array([[1], [-1], [1]])
    return CWComplex(2, [3, 3, 1], [b1, b2],
                     [np.ones(3), np.ones(3), np.ones(1)])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance pass/fail lines after capture ends."""
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "ACCEPTANCE_LINES", None) if module else None
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
