"""Shared fixtures: index tables and the heavyweight replicate sets.

The M=10^4 record sets are session-scoped because the acceptance module and
the operating-characteristics tests assert different statistics of the same
simulations.  All seeds are fixed constants declared here.
"""

import os

import pytest

from bandit_trials import compute_index_table
from bandit_trials.engine import TrialScenario, run_replicates
from bandit_trials.inference import calibrate_critical_value
from bandit_trials.policies import PolicySpec

WORKERS = min(2, os.cpu_count() or 1)

# Base seed for the acceptance-grade runs, fixed before any measurement.
ACCEPT_SEED = 20260810
M_FULL = 10_000

# One line per acceptance criterion, echoed after the run summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def two_arm(kind, mu1, label, T=116, **kw):
    return TrialScenario(K=1, mu=(0.0, mu1), sigma=1.0, T=T,
                         policy=PolicySpec(kind, **kw), hypothesis_label=label)


def four_arm(kind, mu, label, T=302, **kw):
    return TrialScenario(K=3, mu=mu, sigma=1.0, T=T,
                         policy=PolicySpec(kind, **kw), hypothesis_label=label)


LFC = (0.0, 0.178, 0.178, 0.545)
NULL4 = (0.0, 0.0, 0.0, 0.0)


@pytest.fixture(scope="session")
def workers():
    return WORKERS


@pytest.fixture(scope="session")
def table995():
    return compute_index_table(0.995, 302)


@pytest.fixture(scope="session")
def table09():
    return compute_index_table(0.9, 60)


@pytest.fixture(scope="session")
def fr2_h0_records():
    scenario = two_arm("FR", 0.0, "H0")
    return scenario, run_replicates(scenario, None, ACCEPT_SEED + 101, M_FULL,
                                    workers=WORKERS, keep_trajectory=True)


@pytest.fixture(scope="session")
def fr2_h1_records():
    scenario = two_arm("FR", 0.545, "H1")
    return scenario, run_replicates(scenario, None, ACCEPT_SEED + 102, M_FULL,
                                    workers=WORKERS)


@pytest.fixture(scope="session")
def gi2_calibration(table995):
    """(critical, summary, records) for GI under the two-arm global null."""
    scenario = two_arm("GI", 0.0, "H0")
    critical, summary, records = calibrate_critical_value(
        scenario, table995, ACCEPT_SEED + 103, M_FULL, 0.05, workers=WORKERS,
        keep_trajectories=True, return_records=True)
    return scenario, critical, summary, records


@pytest.fixture(scope="session")
def gi2_h1_records(table995):
    scenario = two_arm("GI", 0.545, "H1")
    return scenario, run_replicates(scenario, table995, ACCEPT_SEED + 104, M_FULL,
                                    workers=WORKERS, keep_trajectory=True)


@pytest.fixture(scope="session")
def rgi2_h1_records(table995):
    scenario = two_arm("RGI", 0.545, "H1")
    return scenario, run_replicates(scenario, table995, ACCEPT_SEED + 105, M_FULL,
                                    workers=WORKERS, keep_trajectory=True)
