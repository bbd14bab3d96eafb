"""Shared fixtures: model specs and their scale objects, built once per session."""

import numpy as np
import pytest

from diffkit.coeffs import ModelFamily, expand_family
from diffkit.core import DiffusionSpec, scale_speed


@pytest.fixture(scope="session")
def brownian():
    return expand_family(ModelFamily("brownian"))


@pytest.fixture(scope="session")
def brownian_ss(brownian):
    return scale_speed(brownian)


@pytest.fixture(scope="session")
def gbm03():
    return expand_family(ModelFamily("gbm", (0.3,)))


@pytest.fixture(scope="session")
def gbm03_ss(gbm03):
    return scale_speed(gbm03)


@pytest.fixture(scope="session")
def inverse_bessel3():
    return expand_family(ModelFamily("inverse-bessel3"))


@pytest.fixture(scope="session")
def inverse_bessel3_ss(inverse_bessel3):
    return scale_speed(inverse_bessel3)


@pytest.fixture(scope="session")
def sqbessel3():
    return expand_family(ModelFamily("squared-bessel", (3.0,)))


@pytest.fixture(scope="session")
def sqbessel3_ss(sqbessel3):
    return scale_speed(sqbessel3)


@pytest.fixture(scope="session")
def bm01():
    """Brownian motion killed at the endpoints of (0, 1)."""
    return DiffusionSpec(
        sigma=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        b=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        l=0.0,
        r=1.0,
        label="bm-(0,1)",
    )


@pytest.fixture(scope="session")
def bm01_ss(bm01):
    return scale_speed(bm01)


@pytest.fixture(scope="session")
def natural_0inf():
    """Natural-scale diffusion on (0, inf) absorbed at 0, sigma = 1 + x.

    The scale is the identity, so potential quantities have the closed forms
    u(x, y) = x ^ y while absorption happens in reasonable time (the speed
    measure is finite near infinity), which keeps simulations cheap.
    """
    return DiffusionSpec(
        sigma=lambda x: 1.0 + np.asarray(x, dtype=float),
        b=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        l=0.0,
        r=np.inf,
        label="natural-(0,inf)",
    )


@pytest.fixture(scope="session")
def natural_0inf_ss(natural_0inf):
    return scale_speed(natural_0inf)
