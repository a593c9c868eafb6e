"""Seedable randomness.

Every stochastic routine in the package takes an explicit
``numpy.random.Generator``. The package-wide convention is PCG64, so two
runs built from the same seed consume identical random streams.
"""

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Return the package-standard generator (PCG64) for ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))
