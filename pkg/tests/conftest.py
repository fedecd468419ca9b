import numpy as np
import pytest
from hypothesis import settings

from affinesde.core import AffineStructure, ModelSpec

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def make_model(drift, diffusion, l=1, m=1, Q=None, T=1.0, name="custom", **kw):
    aff = AffineStructure(np.eye(l) if Q is None else Q, T)
    return ModelSpec(l=l, m=m, drift=drift, diffusion=diffusion, affine=aff, name=name, **kw)


@pytest.fixture
def decay_model():
    """f = -x, g = 0 in one dimension, T = 1."""
    return make_model(
        lambda t, X: -X, lambda t, X: np.zeros(X.shape + (1,)),
        jac_f=lambda t, x: -np.eye(1), jac_g=lambda t, x: [np.zeros((1, 1))],
    )


@pytest.fixture
def frozen_model():
    """f = 0, g = 0 in two dimensions, T = 1."""
    return make_model(lambda t, X: np.zeros_like(X), lambda t, X: np.zeros(X.shape + (1,)), l=2)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
