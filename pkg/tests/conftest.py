import numpy as np
import pytest

from revgen.core import SeededRng


@pytest.fixture
def rng():
    return SeededRng(1234)


def assert_close(a, b, atol=0.0, rtol=1e-12, msg=""):
    a = np.asarray(a)
    b = np.asarray(b)
    np.testing.assert_allclose(a, b, atol=atol, rtol=rtol, err_msg=msg)
