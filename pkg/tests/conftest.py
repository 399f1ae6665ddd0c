import logging

import numpy as np
import pytest

logging.getLogger("edmb.train").setLevel(logging.WARNING)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def f64():
    from edmb import diffcore as dc

    with dc.precision("float64"):
        yield
