import math

import pytest

from permitsim import FRICTIONLESS, FirmParams, MarketParams, TimeGrid, generate_noise

N_FIRMS = 6


def make_firms(n=N_FIRMS, *, h=25.0, eta=6e8, sigma=0.2e9 / math.sqrt(6), k=0.92, mu=2e9 / N_FIRMS):
    return tuple(FirmParams(mu=mu, sigma=sigma, k=k, h=h, eta=eta) for _ in range(n))


def make_market(firms=None, *, depth=FRICTIONLESS, penalty=7.5e-7, horizon=10.0, rho=0.8):
    return MarketParams(
        firms=make_firms() if firms is None else firms,
        penalty=penalty,
        depth=depth,
        horizon=horizon,
        rho=rho,
    )


@pytest.fixture(scope="session")
def base_market():
    """Frictionless six-firm market at the default calibration."""
    return make_market()


@pytest.fixture(scope="session")
def frictional_market():
    """Same calibration with a finite market depth."""
    return make_market(depth=1e6)


@pytest.fixture(scope="session")
def medium_noise(base_market):
    """A moderately sized shared shock ensemble (256 paths, 400 steps)."""
    grid = TimeGrid(base_market.horizon, 400)
    return generate_noise(99, grid, base_market.firms, 256)
