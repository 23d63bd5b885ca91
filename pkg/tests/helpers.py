"""Small shared builders for the test-suite."""

import numpy as np

from lightray.geometry import symmetrize


def random_points(rng, n, radius=1.0, dim=2):
    """Uniform points in the disc of the given radius."""
    d = rng.normal(size=(n, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * radius * np.sqrt(rng.uniform(size=(n, 1)))


def sym_tensor(rng, rank, dim=2):
    if rank == 0:
        return np.asarray(rng.normal())
    return symmetrize(rng.normal(size=(dim,) * rank), rank)
