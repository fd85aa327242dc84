import math

import pytest

from app.models.schemas import FilterParams
from app.services.attachment import MasterKeys
from app.services.topology_builder import chain_topology


def within_sigmas(hits: int, trials: int, p: float, sigmas: float = 3.0) -> bool:
    """Binomial count ``hits`` lies within ``sigmas`` standard deviations of ``trials * p``."""
    sd = math.sqrt(trials * p * (1.0 - p))
    return abs(hits - trials * p) <= sigmas * sd


@pytest.fixture
def params() -> FilterParams:
    return FilterParams(m=256, k=5, rho_max=0.5)


@pytest.fixture
def keys() -> MasterKeys:
    return MasterKeys.from_seed(0)


@pytest.fixture
def chain(params):
    """Factory: ``chain(hops)`` builds pub - nap1 - ... - sub with ``hops`` edges."""
    def make(hops: int, seed: int = 0):
        return chain_topology(hops, params, seed)
    return make
