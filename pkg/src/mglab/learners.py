"""Decentralized V-learning for general-sum Markov games.

Every player keeps its own value estimates and one adversarial bandit per
(step, state). Players only ever see the shared state, their own action and
their own reward; the runner in this module merely plays the game and routes
each player's observations back to it.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bandit import MixedExpertState, sample_index, softmax
from .history import RunHistory
from .rng import as_streams
from .schedules import ScheduleParams, alpha
from .validation import ValidationError, check_positive_int


class _VPlayer:
    """Shared value-estimate bookkeeping of one player."""

    def __init__(self, i, params, S, streams):
        self.i = i
        self.params = params
        self.H, self.S, self.A = params.H, int(S), params.A[i]
        self.streams = streams
        H = self.H
        self.upper = np.zeros((H + 1, S))
        self.upper[:H] = H
        self.lower = np.zeros((H + 1, S))
        self.N = np.zeros((H, S), dtype=np.int64)

    def _rng(self, h, s):
        return self.streams.get("learner", self.i, h, s)

    def _update_values(self, h, s, r, s_next, t, beta):
        a_t = alpha(t, self.H)
        nu = self.upper[h + 1, s_next]
        nl = self.lower[h + 1, s_next]
        self.upper[h, s] = (1 - a_t) * self.upper[h, s] + a_t * (r + nu + beta)
        # lower estimate kept in [0, H]; true values are nonnegative
        self.lower[h, s] = max(0.0, (1 - a_t) * self.lower[h, s] + a_t * (r + nl - beta))
        return nu, nl

    def _loss(self, h, r, next_upper):
        # 0-based h: remaining horizon after this step is H - h - 1
        H = self.H
        return (H - h - r - min(next_upper, H - h - 1)) / H


class CCEPlayer(_VPlayer):
    """One player of CCE-V-learning: exponential weights on a weighted loss average."""

    def __init__(self, i, params, S, streams):
        super().__init__(i, params, S, streams)
        self.L = np.zeros((self.H, self.S, self.A))
        self.mu = np.full((self.H, self.S, self.A), 1.0 / self.A)

    def act(self, h, s):
        """Sample an action; returns ``(action, distribution in force)``."""
        dist = self.mu[h, s].copy()
        return sample_index(dist, self._rng(h, s).random()), dist

    def update(self, h, s, a, r, s_next):
        t = self.N[h, s] = self.N[h, s] + 1
        p = self.params
        a_t = alpha(t, self.H)
        eta = p.eta_cce(t, self.i)
        nu, nl = self._update_values(h, s, r, s_next, t, p.beta_cce(t, self.i))
        est = np.zeros(self.A)
        est[a] = self._loss(h, r, nu) / (self.mu[h, s, a] + eta)
        self.L[h, s] = (1 - a_t) * self.L[h, s] + a_t * est
        self.mu[h, s] = softmax(-(eta / a_t) * self.L[h, s])
        return nu, nl


class CEPlayer(_VPlayer):
    """One player of CE-V-learning: a mixed-expert bandit at every (h, s)."""

    def __init__(self, i, params, S, streams):
        super().__init__(i, params, S, streams)
        self.bandits = {}
        self.last_residual = 0.0
        self.last_updates = 0

    def bandit(self, h, s):
        key = (h, s)
        if key not in self.bandits:
            self.bandits[key] = MixedExpertState(self.A, self.H, self.params.iota)
        return self.bandits[key]

    def act(self, h, s):
        prop = self.bandit(h, s).propose(self._rng(h, s))
        self.last_residual = prop.residual
        return prop.action, prop.p.copy()

    def update(self, h, s, a, r, s_next):
        t = self.N[h, s] = self.N[h, s] + 1
        state = self.bandit(h, s)
        if state.t + 1 != t:
            raise RuntimeError("bandit clock out of sync with visit count")
        nu, nl = self._update_values(h, s, r, s_next, t, self.params.beta_ce(t, self.i))
        before = state.counts
        state.observe(self._loss(h, r, nu))
        self.last_updates = int(np.count_nonzero(state.counts != before))
        return nu, nl


def _run(game, params, rng, player_cls, K=None):
    K = params.K if K is None else check_positive_int(K, "K")
    if tuple(params.A) != tuple(game.A) or params.H != game.H:
        raise ValidationError("schedule parameters do not match the game")
    streams = as_streams(rng)
    env = streams.get("env")
    m, H, S = game.m, game.H, game.S
    players = [player_cls(i, params, S, streams) for i in range(m)]
    strides = [int(x) for x in np.concatenate([[1], np.cumprod(game.A[:-1])])]
    cumP = np.cumsum(game.P, axis=-1)

    states = np.empty((K, H + 1), dtype=np.int64)
    actions = np.empty((K, H, m), dtype=np.int64)
    rewards = np.empty((K, H, m))
    dists = [np.empty((K, H, a)) for a in game.A]
    upper = np.empty((K + 1, m))
    lower = np.empty((K + 1, m))
    next_upper = np.empty((K, H, m))
    next_lower = np.empty((K, H, m))
    is_ce = player_cls is CEPlayer
    residuals = np.zeros((K, H, m)) if is_ce else None
    updates = np.zeros((K, H, m), dtype=np.int8) if is_ce else None

    for k in range(K):
        for i, pl in enumerate(players):
            upper[k, i] = pl.upper[0, game.s1]
            lower[k, i] = pl.lower[0, game.s1]
        s = states[k, 0] = game.s1
        for h in range(H):
            j = 0
            for i, pl in enumerate(players):
                a, d = pl.act(h, s)
                actions[k, h, i] = a
                dists[i][k, h] = d
                j += strides[i] * a
            means = game.R[h, s, j]
            u = env.random(m)
            r = np.where(game.bernoulli[h, s, j], (u < means).astype(float), means)
            rewards[k, h] = r
            s_next = min(int(np.searchsorted(cumP[h, s, j], env.random(), side="right")), S - 1)
            for i, pl in enumerate(players):
                next_upper[k, h, i], next_lower[k, h, i] = pl.update(h, s, actions[k, h, i], r[i], s_next)
                if is_ce:
                    residuals[k, h, i] = pl.last_residual
                    updates[k, h, i] = pl.last_updates
            s = states[k, h + 1] = s_next
    for i, pl in enumerate(players):
        upper[K, i] = pl.upper[0, game.s1]
        lower[K, i] = pl.lower[0, game.s1]

    diagnostics = {}
    if is_ce:
        diagnostics = {"fixed_point_residual": residuals, "expert_updates": updates,
                       "max_fixed_point_residual": float(residuals.max())}
    hist = RunHistory(
        game.A, S, game.s1, states, actions, rewards, dists, upper, lower,
        next_upper, next_lower,
        np.stack([pl.upper for pl in players], axis=-1),
        np.stack([pl.lower for pl in players], axis=-1),
        params={"algorithm": "ce" if is_ce else "cce", "H": H, "K": K,
                "iota": params.iota, "c": params.c},
        diagnostics=diagnostics)
    return hist, players


def cce_v_learning(game, params, rng=None):
    """Run CCE-V-learning for all players in lockstep; returns a RunHistory."""
    return _run(game, params, rng, CCEPlayer)[0]


def ce_v_learning(game, params, rng=None):
    """Run CE-V-learning for all players in lockstep; returns a RunHistory."""
    return _run(game, params, rng, CEPlayer)[0]


def update_rule_reconstruction(history, params, h, s, i, k=None, algorithm="cce"):
    """Rebuild player ``i``'s upper estimate at ``(h, s)`` from the episode log.

    Returns ``alpha_t^0 H + sum_j alpha_t^j [r^j + upper_{h+1}^j + beta_j]`` over
    the ``t`` visits in episodes before ``k`` (all episodes if ``k is None``).
    """
    from .schedules import alpha_weights

    eps = history.visits(h, s)
    if k is not None:
        eps = eps[eps < k]
    t = len(eps)
    w = alpha_weights(t, params.H)
    beta = params.beta_cce if algorithm == "cce" else params.beta_ce
    total = w[0] * params.H
    for j, e in enumerate(eps, start=1):
        total += w[j] * (history.rewards[e, h, i] + history.next_upper[e, h, i] + beta(j, i))
    return total


class _VLearningEstimator(BaseEstimator):
    _player_cls = None

    def __init__(self, K=1000, c=0.5, iota=None, p=0.05, epsilon=0.05, random_state=None):
        self.K = K
        self.c = c
        self.iota = iota
        self.p = p
        self.epsilon = epsilon
        self.random_state = random_state

    def _validate(self):
        check_positive_int(self.K, "K")
        if not self.c > 0:
            raise ValidationError("bonus constant c must be positive")
        if not (0 < self.p < 1 and 0 < self.epsilon):
            raise ValidationError("need 0 < p < 1 and epsilon > 0")
        if self.iota is not None and not self.iota > 0:
            raise ValidationError("iota must be positive")

    def fit(self, game, y=None):
        """Run the learner on ``game``; sets ``params_``, ``history_`` and ``players_``."""
        self._validate()
        self.params_ = ScheduleParams.for_game(game, self.K, self.c, self.iota, self.p, self.epsilon)
        self.history_, self.players_ = _run(game, self.params_, self.random_state, self._player_cls)
        self.game_ = game
        return self

    def certified_policy(self, rng=None):
        from .certified import CertifiedPolicySampler

        check_is_fitted(self, "history_")
        return CertifiedPolicySampler(self.history_, rng)

    def confidence_gap(self):
        """Per-player ``(1/K) sum_k (upper - lower)`` at the initial state."""
        check_is_fitted(self, "history_")
        from .certified import gap_bound_from_confidence

        return gap_bound_from_confidence(self.history_)


class CCEVLearning(_VLearningEstimator):
    """Estimator wrapper around :func:`cce_v_learning`."""

    _player_cls = CCEPlayer


class CEVLearning(_VLearningEstimator):
    """Estimator wrapper around :func:`ce_v_learning`."""

    _player_cls = CEPlayer
