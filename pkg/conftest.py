import hypothesis
import numpy as np
import pytest

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.load_profile("fast")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
