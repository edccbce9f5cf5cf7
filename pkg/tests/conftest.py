import math

import pytest

from levixcorr.model import DEFAULT_G, build_system, default_env
from levixcorr.response import at_offset, cancellation_offset


@pytest.fixture(scope="session")
def fig2_node():
    """Room-temperature set-up at 1e-4 mbar, trapped at the cavity node."""
    return build_system(default_env(1e-4, trap_offset_lambda=0.25), DEFAULT_G, DEFAULT_G)


@pytest.fixture(scope="session")
def fig2_x0():
    return cancellation_offset(build_system(default_env(1e-4), DEFAULT_G, DEFAULT_G)).x0


@pytest.fixture(scope="session")
def fig2_cancel(fig2_node, fig2_x0):
    return at_offset(fig2_node, fig2_x0)


@pytest.fixture(scope="session")
def fig2_145(fig2_node):
    return at_offset(fig2_node, 0.145)


@pytest.fixture(scope="session")
def fig3_cancel():
    p = build_system(default_env(5e-7), DEFAULT_G, DEFAULT_G)
    return at_offset(p, cancellation_offset(p).x0)


def deg(x):
    return math.radians(x)
