import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bioconvect.base_state import Parameters, solve_base_state  # noqa: E402


@functools.lru_cache(maxsize=None)
def cached_base(omega=0.0, kappa=0.5, Vc=20.0, n_grid=401):
    p = Parameters(omega=omega, kappa=kappa, Vc=Vc)
    return p, solve_base_state(p, n_grid=n_grid)


@pytest.fixture(scope="session")
def base_absorbing():
    return cached_base(0.0, 0.5)


@pytest.fixture(scope="session")
def base_scattering():
    return cached_base(0.48, 0.5)
