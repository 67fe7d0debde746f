import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("lfnet", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("lfnet")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting --------------------------------------------------------

CRITERIA = {}


@pytest.fixture
def criterion():
    """``record(n, passed, detail)`` stores one summary line per acceptance criterion."""
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        CRITERIA[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        terminalreporter.write_line(CRITERIA.get(n, f"criterion {n:>2}: NOT RUN"))


# -- long experiments shared by the acceptance and trainer tests -----------------

OVERFIT_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def overfit_runs(tmp_path_factory):
    from lfnet.experiments import overfit_experiment
    root = tmp_path_factory.mktemp("overfit")
    return [overfit_experiment(seed, root) for seed in OVERFIT_SEEDS]


@pytest.fixture(scope="session")
def generalization_run(tmp_path_factory):
    from lfnet.experiments import generalization_experiment
    return generalization_experiment(tmp_path_factory.mktemp("generalization"))
