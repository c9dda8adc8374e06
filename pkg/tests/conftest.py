"""Shared fixtures: the two reference parameter sets and random draws."""

import numpy as np
import pytest

from mertonwedge.model import MarketParams

# Reference sets used throughout the suite.  SET_A is moderately
# leveraged (proportion 1.25); SET_B has negative exponent and
# proportion below one, exercising the other sign branch everywhere.
SET_A = dict(mu=0.1, sigma=0.4, delta=0.1, p=0.5)
SET_B = dict(mu=0.08, sigma=0.25, delta=0.1, p=-1.0)


@pytest.fixture
def params_a():
    return MarketParams(lam=0.01, **SET_A)


@pytest.fixture
def params_b():
    return MarketParams(lam=0.001, **SET_B)


def draw_params(rng: np.random.Generator, lam: float = 0.01) -> MarketParams:
    """One random well-posed parameter set, drawn with safety margins.

    The exponent avoids 0 and 1, the proportion avoids 1, and sets whose
    well-posedness margin is too close to zero are redrawn, so every
    returned instance is comfortably inside the admissible region.
    """
    while True:
        if rng.random() < 0.5:
            p = rng.uniform(0.2, 0.8)
        else:
            p = rng.uniform(-2.8, -0.2)
        if rng.random() < 0.5:
            pi = rng.uniform(0.3, 0.9)
        else:
            pi = rng.uniform(1.1, 1.9)
        sigma = rng.uniform(0.2, 0.5)
        delta = rng.uniform(0.05, 0.15)
        mu = pi * sigma**2 * (1.0 - p)
        if p > 0 and 2.0 * delta - p * pi**2 * sigma**2 * (1.0 - p) < 0.02:
            continue
        return MarketParams(mu=mu, sigma=sigma, delta=delta, p=p, lam=lam)
