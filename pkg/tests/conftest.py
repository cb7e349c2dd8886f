import numpy as np
import pytest


def random_probs(rng: np.random.Generator, C: int, zero_frac: float = 0.0, tie_frac: float = 0.0):
    """Random probability vector, optionally with exact zeros and exact ties."""
    p = rng.dirichlet(np.ones(C) * rng.choice([0.3, 1.0, 3.0]))
    if zero_frac and C > 2:
        p[rng.random(C) < zero_frac] = 0.0
    if tie_frac and C > 2 and rng.random() < tie_frac:
        i, j = rng.choice(C, 2, replace=False)
        p[j] = p[i]
    if p.sum() == 0.0:
        p[0] = 1.0
    return p / p.sum()


@pytest.fixture
def np_rng():
    return np.random.default_rng(20240611)


# filled by the acceptance module, echoed after the run whatever the capture mode
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
