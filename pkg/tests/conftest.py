import os
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from odforge.core import LabeledDataset, Metadata

settings.register_profile("odforge", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "odforge"))

warnings.filterwarnings("ignore", category=UserWarning, module="numba")


_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def acceptance_log(request):
    return request.config.stash[_ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(_ACCEPTANCE, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(log):
        terminalreporter.write_line(log[number])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def toy_dataset(n_in=60, n_out=6, d=3, seed=0, ds_id="toy"):
    r = np.random.default_rng(seed)
    x = np.vstack([r.standard_normal((n_in, d)), 6 + r.standard_normal((n_out, d))])
    y = np.r_[np.zeros(n_in), np.ones(n_out)]
    return LabeledDataset(x, y, Metadata(id=ds_id, seed=seed))


@pytest.fixture
def toy():
    return toy_dataset()
