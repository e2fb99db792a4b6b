import numpy as np
import pytest

from mglab.game import MarkovGame


def one_step_game(means, A, bernoulli=False):
    """H=1, S=1 game from a ``(J, m)`` mean table."""
    means = np.asarray(means, dtype=float)
    J, m = means.shape
    return MarkovGame(np.ones((1, 1, J, 1)), means[None, None], A, bernoulli=bernoulli)


def coordination_means(A=2):
    """Two players, both rewarded ``1{a_1 = a_2}``."""
    J = A * A
    a1, a2 = np.arange(J) % A, np.arange(J) // A
    r = (a1 == a2).astype(float)
    return np.stack([r, r], axis=1)


@pytest.fixture
def small_game():
    return MarkovGame.random(2, 2, 2, (2, 2), rng=np.random.default_rng(7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
