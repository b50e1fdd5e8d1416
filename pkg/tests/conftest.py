import numpy as np
import pytest
from hypothesis import strategies as st

from bridgegap.core import BridgePomdp, LatentSpace
from bridgegap.verify import random_model


def look_or_skip(n_bits: int, prior=None) -> BridgePomdp:
    """One step; action 0 reveals z, action 1 shows a blank.

    The state records which action was taken.
    """
    Z = 2**n_bits
    latent = LatentSpace(np.full(Z, 1.0 / Z) if prior is None else prior)
    step = np.zeros((Z, 1, 2, 2), dtype=int)
    step[:, 0, 0] = np.stack([np.zeros(Z), 1 + np.arange(Z)], axis=1)
    step[:, 0, 1] = [1, 0]
    return BridgePomdp(1, latent, [1, 2], [1, Z + 1], 2, np.zeros(Z), np.zeros(Z), [step])


@pytest.fixture
def coin():
    return look_or_skip(1)


@pytest.fixture
def nibble():
    return look_or_skip(4)


@st.composite
def models(draw, caps=(6, 4, 3, 3)):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_model(np.random.default_rng(seed), caps)


@st.composite
def distributions(draw, max_size=8):
    w = draw(st.lists(st.integers(0, 9), min_size=1, max_size=max_size).filter(lambda v: sum(v) > 0))
    w = np.asarray(w, dtype=float)
    return w / w.sum()
