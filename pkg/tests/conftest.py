from __future__ import annotations

import pytest

from wearauth.core import Period
from wearauth.pipeline import feature_table
from wearauth.synth import CohortConfig, generate_cohort


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(CohortConfig(n_subjects=6, days=7, seed=3))


@pytest.fixture(scope="session")
def active_table(small_cohort):
    return feature_table(small_cohort, Period.NON_SEDENTARY)


@pytest.fixture(scope="session")
def sedentary_table(small_cohort):
    return feature_table(small_cohort, Period.SEDENTARY)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
