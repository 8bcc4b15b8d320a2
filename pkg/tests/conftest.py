import pytest

from spellqueue.data import COHORT_MEAN_LOS, COHORT_WEIGHTS, TOTAL_ARRIVAL_RATE, SyntheticConfig, generate_synthetic
from spellqueue.des import ClusterModel

_criteria = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _criteria.append((marker.args[0], "PASS" if rep.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label, status in _criteria:
        terminalreporter.write_line(f"[{status}] {label}")


@pytest.fixture(scope="session")
def cohort_model():
    return ClusterModel.from_means(
        COHORT_WEIGHTS,
        [1.0 / (w * TOTAL_ARRIVAL_RATE) for w in COHORT_WEIGHTS],
        COHORT_MEAN_LOS,
    )


@pytest.fixture(scope="session")
def synthetic_spells():
    return generate_synthetic(SyntheticConfig(seed=7))
