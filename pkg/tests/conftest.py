import numpy as np
import pytest

from dpmix.density import DiscreteMeasure, MixtureDensity
from dpmix.prior import BandwidthPrior, DPPrior, GaussianBaseMeasure


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def std_prior():
    return DPPrior(
        GaussianBaseMeasure(total_mass=1.0, tau=1.0, dim=1),
        BandwidthPrior(shape=2.0, rate=1.0, dim=1),
    )


def random_mixture(rng, dim=1, max_atoms=4, sigma_range=(0.3, 1.5), box=2.0):
    """Random normalized mixture for metric property sweeps."""
    h = int(rng.integers(1, max_atoms + 1))
    atoms = rng.uniform(-box, box, size=(h, dim))
    w = rng.dirichlet(np.ones(h))
    sigma = float(rng.uniform(*sigma_range))
    return MixtureDensity(DiscreteMeasure(atoms, w), sigma)
