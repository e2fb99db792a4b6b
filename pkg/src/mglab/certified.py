"""Certified correlated policies replayed from a RunHistory, and their exact evaluation.

The policy started at step ``h`` from latent episode ``k`` only depends on
``k`` through the visit count ``t = N_h^k(s)``. All evaluators here therefore
run a backward recursion over ``(h, s, t)``:

    W_h(s, t) = (1 - alpha_t) W_h(s, t-1) + alpha_t g_h(s, k_h^t(s)),

where ``g`` is the one-step lookahead under the distributions stored at the
``t``-th visit and ``W_h(s, 0)`` is the value of uniform play from ``(h, s)``.
"""

from dataclasses import dataclass

import numpy as np

from .game import (
    MarkovProductPolicy,
    best_response_table,
    joint_strides,
    product_distribution,
    realize_rewards,
    sample_from_rows,
    sample_next_state,
    value_table,
)
from .rng import as_generator
from .schedules import alpha, log_survival
from .validation import CapExceededError, ValidationError, check_player

#: Largest K * S * H handled by the exact evaluators.
MAX_AUGMENTED_ENTRIES = 5 * 10**7


def _check_history(game, history):
    if tuple(history.A) != tuple(game.A) or history.S != game.S or history.H != game.H:
        raise ValidationError("history dimensions do not match the game")
    if history.K * history.S * history.H > MAX_AUGMENTED_ENTRIES:
        raise CapExceededError(
            f"K*S*H = {history.K * history.S * history.H} exceeds {MAX_AUGMENTED_ENTRIES}")


class CertifiedPolicySampler:
    """Executable certified policy: call :meth:`reset` then :meth:`act` once per step."""

    def __init__(self, history, rng=None):
        self.history = history
        self.rng = as_generator(rng)
        self._counts = [history.counts(h) for h in range(history.H)]
        self._neg_ls = -log_survival(history.K, history.H)
        self.k = None
        self.h = 0
        self.uniform = False

    def reset(self):
        """Start a new episode: draw the latent episode index uniformly."""
        self.k = int(self.rng.integers(self.history.K))
        self.h = 0
        self.uniform = False
        return self

    def sample_visit(self, t):
        """Draw ``l`` in ``1..t`` with probability ``alpha_t^l``."""
        u = self.rng.random()
        target = self._neg_ls[t] + np.log(u)
        l = int(np.searchsorted(self._neg_ls, target, side="left"))
        return min(max(l, 1), t)

    def act(self, s):
        """Joint action (per-player tuple) at the current step in state ``s``."""
        hist = self.history
        if self.k is None:
            self.reset()
        h = self.h
        if h >= hist.H:
            raise ValidationError("episode already finished; call reset()")
        self.h += 1
        if not self.uniform:
            t = int(self._counts[h][self.k, s])
            if t == 0:
                self.uniform = True
            else:
                order, start = hist.visit_order(h)
                self.k = int(order[start[s] + self.sample_visit(t) - 1])
        if self.uniform:
            return tuple(int(self.rng.integers(a)) for a in hist.A)
        return tuple(_draw(d[self.k, h], self.rng) for d in hist.dists)

    def actor(self):
        """Adapter for :func:`mglab.game.sample_episode` (resets on ``h == 0``)."""
        def _actor(h, s):
            if h == 0:
                self.reset()
            return self.act(s)
        return _actor


def _draw(p, rng):
    idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return min(idx, len(p) - 1)


def _alpha_filter(g, H, init):
    """``W[0] = init``, ``W[t] = (1 - alpha_t) W[t-1] + alpha_t g[t-1]``."""
    n = g.shape[0]
    W = np.empty((n + 1,) + g.shape[1:])
    W[0] = init
    for t in range(1, n + 1):
        a = alpha(t, H)
        W[t] = (1.0 - a) * W[t - 1] + a * g[t - 1]
    return W


@dataclass
class AugmentedValueTable:
    """Values ``W_h(s, t)`` for every visit count; optionally greedy deviator actions.

    ``flat[h]`` concatenates the per-state arrays ``W_h(s, 0..N_h(s))`` and
    ``offset[h][s]`` locates state ``s`` inside it. ``greedy[h][k]`` is the
    deviator's action at the step-``h`` visit of episode ``k``.
    """

    flat: list
    offset: list
    uniform_values: np.ndarray
    greedy: list = None
    uniform_greedy: np.ndarray = None

    def lookup(self, h, s, t):
        return self.flat[h][self.offset[h][s] + t]

    def start_value(self, history, s1):
        """Mean of ``W_0(s1, k + 1)`` over episodes: the value of certified play."""
        return self.flat[0][self.offset[0][s1]:][1:history.K + 1].mean(axis=0)

    def value(self, history, h, k, s):
        """Value of the certified policy started at step ``h`` from latent ``k`` in ``s``."""
        t = history.visit_count(h, s, k)
        return self.lookup(h, s, t)


def _augmented_dp(game, history, lookahead, uniform_values, want_greedy=False):
    """Backward recursion over ``(h, s, t)``.

    ``lookahead(h, s, eps, Wnext)`` returns ``g`` of shape ``(n, ...)`` (and the
    greedy actions if ``want_greedy``) for the visits ``eps`` of ``(h, s)``;
    ``Wnext`` has shape ``(n, S, ...)``.
    """
    _check_history(game, history)
    H, S, K = history.H, history.S, history.K
    tail = uniform_values.shape[2:]
    flat = [None] * (H + 1)
    offset = [None] * (H + 1)
    flat[H] = np.zeros((S,) + tail)
    offset[H] = np.arange(S)
    counts_next = np.zeros((K, S), dtype=np.int64)
    greedy = [np.zeros(K, dtype=np.int64) for _ in range(H)] if want_greedy else None
    for h in reversed(range(H)):
        order, start = history.visit_order(h)
        parts = []
        for s in range(S):
            eps = order[start[s]:start[s + 1]]
            Wnext = flat[h + 1][offset[h + 1][None, :] + counts_next[eps]]
            out = lookahead(h, s, eps, Wnext)
            if want_greedy:
                g, act = out
                greedy[h][eps] = act
            else:
                g = out
            parts.append(_alpha_filter(g, H, uniform_values[h, s]))
        flat[h] = np.concatenate(parts)
        offset[h] = start[:S] + np.arange(S)
        counts_next = history.counts(h)
    return AugmentedValueTable(flat, offset, uniform_values, greedy)


def _joint_over_visits(history, eps, h, skip=None):
    """Product of the stored per-player distributions at the given visits, ``(n, J)``.

    Player ``skip`` is replaced by an all-ones vector, which yields the
    opponents' weight of each joint action.
    """
    dists = []
    for i, d in enumerate(history.dists):
        dists.append(np.ones((len(eps), history.A[i])) if i == skip else d[eps, h])
    return product_distribution(dists)


def certified_value_table(game, history):
    """Augmented value table of the certified policy for all players."""
    U = value_table(game, MarkovProductPolicy.uniform(game))

    def lookahead(h, s, eps, Wnext):
        joint = _joint_over_visits(history, eps, h)
        reward = joint @ game.R[h, s]
        cont = np.einsum("nt,ntm->nm", joint @ game.P[h, s], Wnext)
        return reward + cont

    return _augmented_dp(game, history, lookahead, U)


def certified_exact_value(game, history, table=None):
    """Per-player value at ``s1``: the average over ``k`` of ``W_0(s1, k+1)``."""
    table = certified_value_table(game, history) if table is None else table
    return table.start_value(history, game.s1)


def _deviation_lookahead(game, history, i, inner):
    table = game.joint_table
    onehot = np.eye(game.A[i])[table[:, i]]

    def lookahead(h, s, eps, Wnext):
        others = _joint_over_visits(history, eps, h, skip=i)
        target = game.R[h, s, :, i][None, :] + Wnext[..., 0] @ game.P[h, s].T
        Q = (others * target) @ onehot
        out = inner(h, s, eps, Q)
        if isinstance(out, tuple):
            return out[0][:, None], out[1]
        return out[:, None]

    return lookahead


def certified_deviation_table(game, history, i, mode="best-response"):
    """Augmented table for player ``i`` deviating while observing the latent index.

    ``mode`` is ``"best-response"`` (maximize over own action at each visit) or
    ``"best-modification"`` (for each recommended action, the best replacement).
    Because every stored per-visit policy is a product, the recommended action
    carries no information about the opponents and both modes coincide.
    """
    i = check_player(i, game.m)
    unif = MarkovProductPolicy.uniform(game)
    V_unif, act_unif = best_response_table(game, unif, i)
    if mode == "best-response":
        def inner(h, s, eps, Q):
            return Q.max(axis=1), Q.argmax(axis=1)
    elif mode == "best-modification":
        def inner(h, s, eps, Q):
            rec = history.dists[i][eps, h]
            # opponents are independent of the recommendation, so every
            # recommended action has the same best replacement
            best = Q.max(axis=1, keepdims=True)
            return (rec * best).sum(axis=1), Q.argmax(axis=1)
    else:
        raise ValidationError(f"unknown deviation mode {mode!r}")
    tab = _augmented_dp(game, history, _deviation_lookahead(game, history, i, inner),
                        V_unif[:, :, None], want_greedy=True)
    tab.uniform_greedy = act_unif
    return tab


def certified_omniscient_deviation(game, history, i, mode="best-response"):
    """Value at ``s1`` of player ``i``'s latent-index-observing deviation.

    Upper-bounds every deviation that only sees the play history, so
    ``value - certified_exact_value`` is a conservative gap.
    """
    tab = certified_deviation_table(game, history, i, mode)
    return float(tab.start_value(history, game.s1)[0])


def certified_deviation_value(game, history, i, sigma):
    """Exact value of player ``i`` playing the Markov policy ``sigma`` (H, S, A_i)
    against the certified policy of the others."""
    i = check_player(i, game.m)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (game.H, game.S, game.A[i]):
        raise ValidationError(f"deviation has shape {sigma.shape}")
    base = MarkovProductPolicy.uniform(game).replace(i, sigma)
    U = value_table(game, base)[:, :, i:i + 1]

    def inner(h, s, eps, Q):
        return Q @ sigma[h, s]

    tab = _augmented_dp(game, history, _deviation_lookahead(game, history, i, inner), U)
    return float(tab.start_value(history, game.s1)[0])


def gap_bound_from_confidence(history):
    """Per-player ``(1/K) sum_k (upper^k - lower^k)`` at the initial state."""
    if history.upper is None or history.lower is None:
        raise ValidationError("history has no value snapshots")
    K = history.K
    return (history.upper[:K] - history.lower[:K]).mean(axis=0)


def certified_rollouts(game, history, n, rng=None, deviation=None, batch=100_000):
    """Simulate ``n`` episodes of the certified policy; returns returns ``(n, m)``.

    ``deviation`` is ``None``, ``("markov", i, sigma)`` with ``sigma`` of shape
    ``(H, S, A_i)``, or ``("omniscient", i, table)`` with ``table`` from
    :func:`certified_deviation_table`.
    """
    _check_history(game, history)
    rng = as_generator(rng)
    H, K = history.H, history.K
    counts = [history.counts(h) for h in range(H)]
    orders = [history.visit_order(h) for h in range(H)]
    neg_ls = -log_survival(K, H)
    strides = joint_strides(game.A)
    out = []
    for b0 in range(0, n, batch):
        nb = min(batch, n - b0)
        k = rng.integers(K, size=nb)
        uni = np.zeros(nb, dtype=bool)
        s = np.full(nb, game.s1, dtype=np.int64)
        total = np.zeros((nb, game.m))
        for h in range(H):
            t = counts[h][k, s]
            uni |= t == 0
            u = rng.random(nb)
            tt = np.maximum(t, 1)
            l = np.searchsorted(neg_ls, neg_ls[tt] + np.log(u), side="left")
            l = np.clip(l, 1, tt)
            order, start = orders[h]
            k = np.where(uni, k, order[np.minimum(start[s] + l - 1, K - 1)])
            j = np.zeros(nb, dtype=np.int64)
            for i, d in enumerate(history.dists):
                probs = np.where(uni[:, None], 1.0 / game.A[i], d[k, h])
                a = sample_from_rows(probs, rng.random(nb))
                if deviation is not None and deviation[1] == i:
                    a = _deviate(deviation, h, s, k, uni, rng)
                j += strides[i] * a
            total += realize_rewards(game, h, s, j, rng.random((nb, game.m)))
            s = sample_next_state(game, h, s, j, rng.random(nb))
        out.append(total)
    return np.concatenate(out)


def _deviate(deviation, h, s, k, uni, rng):
    kind, i, obj = deviation
    if kind == "markov":
        return sample_from_rows(obj[h, s], rng.random(len(s)))
    if kind == "omniscient":
        return np.where(uni, obj.uniform_greedy[h, s], obj.greedy[h][k])
    raise ValidationError(f"unknown deviation kind {kind!r}")
