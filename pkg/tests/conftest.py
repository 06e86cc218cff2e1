import numpy as np
import pytest

from ppglid.ppg import PhoneInventory, PosteriorGram


@pytest.fixture
def inventory():
    return PhoneInventory(("a", "b", "c"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_ppg(rng, num_frames, num_phones, frame_shift_ms=10.0):
    values = rng.dirichlet(np.ones(num_phones), size=num_frames)
    return PosteriorGram(values=values, frame_shift_ms=frame_shift_ms)
