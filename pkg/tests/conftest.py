import numpy as np
import pytest

from polar.channel import BmsChannel, Family
from polar.construction import PolarCode, bec_reliability, select_frozen


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def mixed_code():
    """N = 8 code with u1, u2, u3, u5 frozen."""
    return PolarCode.from_frozen_positions(3, [1, 2, 3, 5])


@pytest.fixture
def bec_code():
    def build(n, p_e=1e-3, erasure=0.5):
        return select_frozen(bec_reliability(erasure, n), p_e)
    return build


@pytest.fixture
def random_code(rng):
    def build(n, info_fraction=None):
        fraction = rng.uniform(0.05, 0.95) if info_fraction is None else info_fraction
        return PolarCode(n=n, frozen=rng.random(1 << n) >= fraction)
    return build


@pytest.fixture
def bsc_half():
    return BmsChannel(Family.BSC, 0.11)


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    monkeypatch.setenv('PLAB_CACHE_DIR', str(tmp_path / 'cache'))
