import math

import numpy as np
from hypothesis import settings

settings.register_profile("repo", max_examples=40, deadline=None, derandomize=True)
settings.load_profile("repo")


def within_se(estimate, target, se, k=3.0):
    return abs(estimate - target) <= k * se


def variance_and_se(values):
    """Sample variance and its standard error from the fourth central moment."""
    values = np.asarray(values, dtype=float)
    centered = values - values.mean()
    var = centered.var(ddof=1)
    m4 = np.mean(centered**4)
    return var, math.sqrt(max(m4 - var**2, 0.0) / values.size)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
