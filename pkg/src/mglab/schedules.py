"""Learning-rate schedules shared by the V-learning players and certified policies."""

import math
from dataclasses import dataclass, field

import numpy as np

from .validation import ValidationError


def alpha(t, H):
    """Step size ``(H+1)/(H+t)``; equals 1 at ``t = 1``."""
    return (H + 1.0) / (H + t)


def alpha_weights(t, H):
    """Weights ``alpha_t^0 .. alpha_t^t`` given by the product recursion.

    ``alpha_t^j = alpha_j * prod_{k=j+1..t} (1 - alpha_k)`` and
    ``alpha_t^0 = prod_{k=1..t} (1 - alpha_k)``.
    """
    if t < 0:
        raise ValidationError("t must be nonnegative")
    w = np.ones(1)
    for k in range(1, t + 1):
        a = alpha(k, H)
        w *= 1.0 - a
        w = np.append(w, a)
    return w


def iter_alpha_weights(T, H):
    """Yield ``(t, alpha_weights(t, H))`` for ``t = 1..T`` without recomputing."""
    w = np.ones(1)
    for t in range(1, T + 1):
        a = alpha(t, H)
        w = np.append(w * (1.0 - a), a)
        yield t, w


def log_survival(n, H):
    """``log prod_{k=2..l} (1 - alpha_k)`` for ``l = 0..n`` (entries 0 and 1 are 0).

    Because ``alpha_1 = 1``, for ``1 <= l <= t`` the partial sums satisfy
    ``sum_{j<=l} alpha_t^j = exp(out[t] - out[l])``.
    """
    k = np.arange(2, n + 1)
    out = np.zeros(n + 1)
    out[2:] = np.cumsum(np.log((k - 1.0) / (H + k)))
    return out


def log_weight(t, H):
    """``log(alpha_t^t / alpha_t^1)``, the predictable weight used by mixed-expert FTRL."""
    if t < 1:
        raise ValidationError("t must be >= 1")
    return math.log(alpha(t, H)) - float(log_survival(t, H)[-1])


def default_iota(m, A, H, S, K, p=0.05, epsilon=0.05):
    """``log(m * max A_i * H * S * K / (p * eps))``."""
    return math.log(m * max(A) * H * S * K / (p * epsilon))


@dataclass
class ScheduleParams:
    """Hyperparameters of CCE-/CE-V-learning for one game."""

    H: int
    K: int
    A: tuple
    iota: float
    c: float = 0.5
    extras: dict = field(default_factory=dict)

    @classmethod
    def for_game(cls, game, K, c=0.5, iota=None, p=0.05, epsilon=0.05):
        if iota is None:
            iota = default_iota(game.m, game.A, game.H, game.S, K, p, epsilon)
        return cls(H=game.H, K=int(K), A=tuple(game.A), iota=float(iota), c=float(c))

    def alpha(self, t):
        return alpha(t, self.H)

    def eta_cce(self, t, i):
        return math.sqrt(self.H * self.iota / (self.A[i] * t))

    def beta_cce(self, t, i):
        H, c, io = self.H, self.c, self.iota
        return c * math.sqrt(H**3 * self.A[i] * io / t) + 2 * c * H**2 * io / t

    def eta_ce(self, t, i):
        return math.sqrt(self.iota / (self.A[i] * t))

    def beta_ce(self, t, i):
        H, c, io = self.H, self.c, self.iota
        return c * H**2 * self.A[i] * math.sqrt(io / t) + 2 * c * H**2 * io / t
