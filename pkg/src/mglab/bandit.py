"""Weighted adversarial bandits: FTRL with predictable weights, the mixed-expert
reduction to low swap regret, and exact regret oracles.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .schedules import alpha, log_survival
from .validation import NumericalError, ValidationError

FIXED_POINT_TOL = 1e-9
POWER_ITERATION_CAP = 10**5


def default_bandit_iota(H, A, T, p=0.05):
    """``4 log(8 H A T / p)``."""
    return 4.0 * math.log(8.0 * H * A * T / p)


def softmax(logits):
    z = np.exp(logits - logits.max())
    return z / z.sum()


@dataclass
class FtrlExpertState:
    """One FTRL learner over ``A`` actions fed weighted loss estimates."""

    A: int
    iota: float
    t_b: int = 0
    cum_weighted: np.ndarray = None

    def __post_init__(self):
        if self.cum_weighted is None:
            self.cum_weighted = np.zeros(self.A)

    def eta(self, t):
        return math.sqrt(self.iota / (self.A * t))

    def update(self, estimate, weight):
        self.t_b += 1
        self.cum_weighted += weight * estimate


def ftrl_distribution(expert, u):
    """``q(a) ∝ exp(-(eta_{t_b} / u) * cum_weighted(a))``; uniform before any update."""
    if expert.t_b == 0:
        return np.full(expert.A, 1.0 / expert.A)
    return softmax(-(expert.eta(expert.t_b) / u) * expert.cum_weighted)


def fixed_point_residual(p, Q):
    return float(np.max(np.abs(p @ Q - p)))


def solve_expert_fixed_point(Q, tol=FIXED_POINT_TOL, max_iter=POWER_ITERATION_CAP):
    """Stationary distribution ``p = p Q`` of the row-stochastic matrix ``Q``.

    Row ``b`` of ``Q`` is sub-expert ``b``'s action distribution. Power
    iteration from uniform is tried first, then a direct solve of
    ``(I - Q^T) p = 0`` with the normalization row appended.
    """
    Q = np.asarray(Q, dtype=float)
    A = Q.shape[0]
    p = np.full(A, 1.0 / A)
    # p Q^n with n doubling each round (repeated squaring), n capped at max_iter
    Qn, n = Q, 1
    while True:
        nxt = p @ Qn
        done = np.max(np.abs(nxt - p)) <= tol * 1e-3
        p = nxt
        if done or 2 * n > max_iter:
            break
        Qn, n = Qn @ Qn, 2 * n
    if fixed_point_residual(p, Q) > tol:
        M = np.vstack([np.eye(A) - Q.T, np.ones((1, A))])
        rhs = np.zeros(A + 1)
        rhs[-1] = 1.0
        p = np.linalg.lstsq(M, rhs, rcond=None)[0]
        p = np.clip(p, 0.0, None)
        p /= p.sum()
    residual = fixed_point_residual(p, Q)
    if residual > tol:
        raise NumericalError(f"fixed point residual {residual:.3e} exceeds {tol:.0e}")
    return p / p.sum()


def loss_estimate(q, gamma, played, realized):
    """Implicit-exploration estimate: ``realized / (q[played] + gamma)`` at ``played``."""
    est = np.zeros(len(q))
    est[played] = realized / (q[played] + gamma)
    return est


def sample_index(p, u):
    idx = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    return min(idx, len(p) - 1)


@dataclass
class Proposal:
    """Everything drawn in the first half of a mixed-expert round."""

    t: int
    u: float
    q: np.ndarray
    p: np.ndarray
    expert: int
    action: int
    residual: float


@dataclass
class MixedExpertState:
    """``A`` FTRL sub-experts mixed through the stationary distribution of their proposals."""

    A: int
    H: int
    iota: float
    t: int = 0
    experts: list = field(default=None)
    max_residual: float = 0.0
    _pending: Proposal = field(default=None, repr=False)
    _log_surv: float = 0.0

    def __post_init__(self):
        if self.experts is None:
            self.experts = [FtrlExpertState(self.A, self.iota) for _ in range(self.A)]

    def log_weight(self, t):
        # incremental version of schedules.log_weight
        return math.log(alpha(t, self.H)) - self._log_surv_at(t)

    def _log_surv_at(self, t):
        if t >= 2:
            return self._log_surv + math.log((t - 1.0) / (self.H + t))
        return 0.0

    def distributions(self, u):
        """Current ``(A, A)`` matrix of sub-expert proposals under weight ``u``."""
        return np.stack([ftrl_distribution(e, u) for e in self.experts])

    def propose(self, rng):
        """Compute proposals and mixture, then sample a sub-expert and an action."""
        t = self.t + 1
        u = math.exp(self.log_weight(t))
        q = self.distributions(u)
        p = solve_expert_fixed_point(q)
        residual = fixed_point_residual(p, q)
        self.max_residual = max(self.max_residual, residual)
        b = sample_index(p, rng.random())
        a = sample_index(q[b], rng.random())
        self._pending = Proposal(t, u, q, p, b, a, residual)
        return self._pending

    def observe(self, realized_loss):
        """Feed the realized loss of the pending action to the sampled sub-expert."""
        prop = self._pending
        if prop is None:
            raise RuntimeError("observe() called without a pending proposal")
        expert = self.experts[prop.expert]
        gamma = expert.eta(expert.t_b + 1)
        est = loss_estimate(prop.q[prop.expert], gamma, prop.action, realized_loss)
        expert.update(est, prop.u)
        self._log_surv = self._log_surv_at(prop.t)
        self.t = prop.t
        self._pending = None
        return prop

    @property
    def counts(self):
        return np.array([e.t_b for e in self.experts])


def mixed_expert_step(state, loss_fn, rng):
    """One full round: propose, play, observe ``loss_fn(action)``, update.

    Returns ``(action, state)``; ``state`` is updated in place.
    """
    prop = state.propose(rng)
    state.observe(float(loss_fn(prop.action)))
    return prop.action, state


def _best_targets(mass):
    """Per-source best target with identity preferred, then lowest index."""
    A = mass.shape[0]
    best = mass.argmin(axis=1)
    keep = mass[np.arange(A), np.arange(A)] <= mass[np.arange(A), best]
    return np.where(keep, np.arange(A), best)


def swap_regret(weights, mean_losses, actions, mode="action", played_dists=None):
    """Exact weighted swap regret and the maximizing modification ``F``.

    ``mode="action"`` compares against ``l_i(F(a^i))``; ``mode="distribution"``
    compares against ``<F∘p^i, l_i>`` and needs ``played_dists``.
    """
    w = np.asarray(weights, dtype=float)
    L = np.asarray(mean_losses, dtype=float)
    actions = np.asarray(actions, dtype=int)
    A = L.shape[1]
    played = float(np.sum(w * L[np.arange(len(actions)), actions]))
    if mode == "action":
        src = np.eye(A)[actions]
    elif mode == "distribution":
        if played_dists is None:
            raise ValidationError("distribution mode needs played_dists")
        src = np.asarray(played_dists, dtype=float)
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    # mass[b, c]: weighted loss routed from source b if it is swapped to c
    mass = (src * w[:, None]).T @ L
    F = _best_targets(mass)
    return played - float(mass[np.arange(A), F].sum()), F


def weighted_external_regret(weights, mean_losses, actions):
    """``sum w_i l_i(a_i) - min_a sum w_i l_i(a)``; may be negative."""
    w = np.asarray(weights, dtype=float)
    L = np.asarray(mean_losses, dtype=float)
    actions = np.asarray(actions, dtype=int)
    played = float(np.sum(w * L[np.arange(len(actions)), actions]))
    return played - float((w @ L).min())


def swap_regret_trace(H, mean_losses, actions, played_dists=None):
    """``R_swap(t)`` and ``R_ext(t)`` with weights ``alpha_t^i`` for every ``t``.

    The per-source loss masses are updated recursively, ``O(T A^2)`` overall.
    """
    L = np.asarray(mean_losses, dtype=float)
    actions = np.asarray(actions, dtype=int)
    T, A = L.shape
    t_idx = np.arange(1, T + 1)
    mass = np.zeros((A, A))
    dmass = np.zeros((A, A))
    row_mass = np.zeros(A)
    played = 0.0
    swap = np.empty(T)
    ext = np.empty(T)
    src_d = None if played_dists is None else np.asarray(played_dists, dtype=float)
    dswap = None if src_d is None else np.empty(T)
    for k in range(T):
        # weights alpha_t^i obey w_t = (1 - alpha_t) w_{t-1} with alpha_t^t = alpha_t appended
        a_t = alpha(k + 1, H)
        decay = 1.0 - a_t
        a = actions[k]
        mass *= decay
        mass[a] += a_t * L[k]
        row_mass = decay * row_mass + a_t * L[k]
        played = decay * played + a_t * L[k, a]
        F = _best_targets(mass)
        swap[k] = played - mass[np.arange(A), F].sum()
        ext[k] = played - row_mass.min()
        if src_d is not None:
            dmass = decay * dmass + a_t * np.outer(src_d[k], L[k])
            Fd = _best_targets(dmass)
            dswap[k] = played - dmass[np.arange(A), Fd].sum()
    out = {"t": t_idx, "swap": swap, "external": ext}
    if dswap is not None:
        out["swap_distribution"] = dswap
    return out


def write_regret_trace(path, trace):
    """CSV with columns ``t, R_swap, R_ext``."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["t", "R_swap", "R_ext"])
        for t, s, e in zip(trace["t"], trace["swap"], trace["external"]):
            wr.writerow([int(t), repr(float(s)), repr(float(e))])


def weight_cap_log(H, T):
    """``log W`` with ``W = (H+T)^{2H}``."""
    return 2 * H * math.log(H + T)


def check_weight_cap(H, T):
    """True iff ``log u_t`` is nondecreasing and ``<= log W`` for all ``t <= T``."""
    ls = log_survival(T, H)
    t = np.arange(1, T + 1)
    lw = np.log(alpha(t, H)) - ls[1:]
    return bool(np.all(np.diff(lw) >= -1e-12) and np.all(lw <= weight_cap_log(H, T)))


__all__ = [
    "FtrlExpertState", "MixedExpertState", "Proposal", "default_bandit_iota",
    "ftrl_distribution", "solve_expert_fixed_point", "loss_estimate",
    "mixed_expert_step", "swap_regret", "weighted_external_regret",
    "swap_regret_trace", "write_regret_trace", "check_weight_cap", "log_weight",
]
