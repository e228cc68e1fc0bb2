import numpy as np
import pytest

from drivenchain import InitialData, InteractionPotential, nearest_neighbor_potential


@pytest.fixture(scope="session")
def nn11():
    """Pinned chain with unit pinning and coupling."""
    return nearest_neighbor_potential(1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def decoupled():
    """No coupling: every site is an independent unit oscillator."""
    return nearest_neighbor_potential(1.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def unpinned():
    """No pinning: the frequency vanishes at wavenumber zero."""
    return nearest_neighbor_potential(0.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def multi_critical():
    """Second-neighbor coupling tuned to create one interior critical point."""
    c = 0.4
    return InteractionPotential(r=2, a=(2.0 + 2.0 * c, -1.0, c), sigma=1.0)


@pytest.fixture(scope="session")
def zero_init():
    return InitialData.zero()


@pytest.fixture(scope="session")
def unit_kick():
    """Unit displacement at the driven site."""
    return InitialData.from_windows({0: 1.0})


@pytest.fixture()
def rng():
    return np.random.default_rng(20260809)
