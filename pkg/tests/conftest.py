import os

# Single-threaded BLAS: faster for this workload's matrix shapes and
# keeps timings stable.  Must be set before numpy loads.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_addoption(parser):
    parser.addoption(
        "--skip-acceptance",
        action="store_true",
        default=False,
        help="skip the long-running acceptance suite",
    )


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--skip-acceptance"):
        return
    skip = pytest.mark.skip(reason="--skip-acceptance")
    for item in items:
        if "acceptance" in item.nodeid:
            item.add_marker(skip)
