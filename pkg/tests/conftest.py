import numpy as np
import pytest

from finsler_flow import metrics

CRITERIA_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[CRITERIA_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    def record(number: int, passed: bool, detail: str):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[CRITERIA_KEY].append(line)
        return passed
    return record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


RANDERS_SINE = dict(b_sine=(0.2, 0.0))


def scenario_families():
    """(name, metric, measure) for every family the suites sweep."""
    return [
        ("euclidean", metrics.euclidean(), metrics.zero_measure()),
        ("conformal", metrics.riemannian_conformal(0.1), metrics.cosine_bump(0.2)),
        ("randers-const", metrics.randers(b_const=(0.3, 0.0)), metrics.zero_measure()),
        ("randers-sine", metrics.randers(**RANDERS_SINE), metrics.cosine_bump(0.2)),
        ("randers-shrink", metrics.shrinking(metrics.randers(**RANDERS_SINE), 0.1), metrics.cosine_bump(0.2)),
        ("randers-conformal", metrics.randers(b_const=(0.1, -0.15), conformal_amplitude=0.15),
         metrics.cosine_bump(0.1, (1, 1))),
    ]
