import numpy as np
import pytest
from hypothesis import settings

from pacb.mc import PriorSpec
from pacb.model import ARX, IIDIsotropic

settings.register_profile("pacb", deadline=None, max_examples=30, derandomize=True)
settings.load_profile("pacb")


@pytest.fixture
def iid2():
    return IIDIsotropic([1.0, -0.5], 1.0, 0.5)


@pytest.fixture
def ar1():
    return ARX((0.5,), (0.0,), 1.0, 1.0)


@pytest.fixture
def arx_ref():
    return ARX((0.5,), (0.3,), 0.5, 1.0)


@pytest.fixture
def prior2():
    return PriorSpec.isotropic(2, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_stable_arx(rng, k, radius=0.9):
    """ARX with AR roots drawn uniformly in the disc of ``radius`` (conjugate pairs kept real)."""
    roots = []
    while len(roots) < k:
        if k - len(roots) >= 2 and rng.random() < 0.5:
            r = radius * np.sqrt(rng.random())
            t = rng.uniform(0, np.pi)
            roots += [r * np.exp(1j * t), r * np.exp(-1j * t)]
        else:
            roots.append(rng.uniform(-radius, radius))
    poly = np.real(np.poly(roots))  # z^k + c1 z^{k-1} + ...
    a = tuple(-poly[1:])
    b = tuple(rng.normal(0, 1, k))
    return ARX(a, b, float(rng.uniform(0.3, 1.5)), float(rng.uniform(0.3, 1.5)))
