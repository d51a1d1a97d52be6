"""Shared fixtures for expensive study runs."""

import pytest

from phipca.simulation import SimConfig, run_experiment

# n=400, p=200, r=10, m=20, 20 replicates
STUDY = dict(n=400, p=200, r=10, replicates=20, q_max=50, m=20, seed=0)


@pytest.fixture(scope="session")
def study_light():
    """Mild contamination: 5% t_1 rows at unit scale."""
    return run_experiment(SimConfig(pi=0.05, sigma_out=1.0, **STUDY))


@pytest.fixture(scope="session")
def study_heavy():
    """Heavy contamination: 10% t_1 rows at scale 1000."""
    return run_experiment(SimConfig(pi=0.1, sigma_out=1000.0, **STUDY))


_VERDICTS = {}


@pytest.fixture(scope="session")
def verdict():
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""

    def record(criterion, passed, detail=""):
        _VERDICTS[criterion] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        passed, detail = _VERDICTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
