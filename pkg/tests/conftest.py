import numpy as np
import pytest

from distkalman import linalg
from distkalman.rng import Rng


def random_spd(rng: Rng, dim: int, ridge: float = 1e-3) -> np.ndarray:
    """Well-conditioned random SPD matrix (Wishart plus a small ridge)."""
    factor = rng.standard_normal((dim, dim))
    m = linalg.sym(factor @ factor.T)
    top = float(np.linalg.eigvalsh(m)[-1])
    return m + ridge * max(top, 1.0) * np.eye(dim)


def random_symmetric(rng: Rng, dim: int) -> np.ndarray:
    return linalg.sym(rng.standard_normal((dim, dim)))


@pytest.fixture
def rng():
    return Rng(20240917)
