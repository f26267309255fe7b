import sys

import numpy as np
import pytest
from hypothesis import settings

from gustpp.dataset import ScenarioConfig, generate_scenario, split_chronological

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_scenario():
    """Three years, four stations, two lead times of the nonlinear preset."""
    return generate_scenario(ScenarioConfig.preset("nonlinear", n_stations=4, lead_times=(6, 15), rng_seed=11))


@pytest.fixture(scope="session")
def small_split(small_scenario):
    return split_chronological(small_scenario.cases, ([2010], [2011], [2012]))


@pytest.fixture(scope="session")
def linear_split():
    sc = generate_scenario(ScenarioConfig.preset("linear", n_stations=3, lead_times=(12,), rng_seed=5))
    return split_chronological(sc.cases, ([2010], [2011], [2012]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    # one line per acceptance criterion, filled in by test_acceptance.py
    mod = sys.modules.get("test_acceptance")
    RESULTS = getattr(mod, "RESULTS", None)
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS, key=lambda k: int(k.split()[0])):
            ok, detail = RESULTS[key]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
