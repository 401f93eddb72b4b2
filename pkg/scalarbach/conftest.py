import numpy as np
import pytest

from scalarbach.catalog import get_metric
from scalarbach.chart import GridSpec, make_chart
from scalarbach.config import AppConfig, set_config


@pytest.fixture(autouse=True)
def settings():
    set_config(AppConfig(_env_file=None))
    yield
    set_config(None)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def euclidean():
    return get_metric("euclidean")


@pytest.fixture
def flat_ball():
    return get_metric("flat-ball")


@pytest.fixture
def bach_wave():
    return get_metric("bach-wave")


@pytest.fixture
def round_s4():
    return get_metric("round-s4")


@pytest.fixture
def small_box():
    return make_chart(GridSpec(resolution=[4, 4, 4, 4]))


@pytest.fixture
def wave_box():
    # bach-wave only depends on x1
    return make_chart(GridSpec(resolution=[8, 4, 4, 4]))
