import logging

import numpy as np
import pytest

from fusepathlib.diffop import DifferenceOperator

from .mocks import THREE_POINT_X, TWO_POINT_X


@pytest.fixture
def two_point():
    """x = (3, 1) as a 2 x 1 matrix; the observations fuse exactly at lambda = 1."""
    return TWO_POINT_X.copy(), DifferenceOperator.for_shape(2, 1)


@pytest.fixture
def three_point():
    return THREE_POINT_X.copy(), DifferenceOperator.for_shape(3, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(autouse=True)
def quiet_fusepath_logger():
    logger = logging.getLogger("fusepath")
    level = logger.level
    yield
    logger.setLevel(level)


@pytest.fixture
def isolated_env(monkeypatch, tmp_path):
    """Run from an empty directory without fusepath environment variables."""
    monkeypatch.chdir(tmp_path)
    for name in ("FUSEPATH_THREADS", "FUSEPATH_MAX_ITER", "LOADING_MODE_FOR_FUSEPATH_ENV_VARS"):
        monkeypatch.delenv(name, raising=False)
    return tmp_path
