import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from segconf.raster import ClassSet, ProbCube  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def classes3():
    return ClassSet.numbered(3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cube(rng, h, w, q, sharp=2.0):
    logits = sharp * rng.standard_normal((h, w, q))
    p = np.exp(logits - logits.max(axis=-1, keepdims=True))
    p /= p.sum(axis=-1, keepdims=True)
    return ProbCube.from_array(p, ClassSet.numbered(q))
