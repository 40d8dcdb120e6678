import pytest

from idg.offline import run_offline, simulate_ground_truth
from idg.scenario import BUNDLED, bundled_path, load_scenario


@pytest.fixture(scope="session")
def scenarios():
    return {name: load_scenario(bundled_path(name)) for name in BUNDLED}


@pytest.fixture(scope="session")
def errorfree(scenarios):
    return scenarios["errorfree"]


@pytest.fixture(scope="session")
def errorfree_gt(errorfree):
    return simulate_ground_truth(errorfree)


@pytest.fixture(scope="session")
def errorfree_offline(errorfree, errorfree_gt):
    return run_offline(errorfree, errorfree_gt)


@pytest.fixture(scope="session")
def repro_result(scenarios):
    # the full study; shared by the acceptance tests and the slower integration tests
    from idg.repro import run_repro
    return run_repro(scenarios)
