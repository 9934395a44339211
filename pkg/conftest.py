from __future__ import annotations

import math

import pytest

from demest.dem import Dem
from demest.polarizations import ExactPolarizations
from demest.sampling import sample_histories

R2_PROBABILITIES = {"10": 0.1, "01": 0.2, "11": 0.05}
R2_ATTENUATIONS = {m: -math.log1p(-2 * p) for m, p in R2_PROBABILITIES.items()}


@pytest.fixture
def r2_dem() -> Dem:
    return Dem.from_strings(R2_PROBABILITIES)


@pytest.fixture
def r2_exact(r2_dem) -> ExactPolarizations:
    return ExactPolarizations(r2_dem)


@pytest.fixture(scope="session")
def r2_data():
    return sample_histories(Dem.from_strings(R2_PROBABILITIES), 200_000, seed=11)
