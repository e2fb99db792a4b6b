"""Nash coordinate ascent for Markov potential games.

Each round fixes all players but one, lets that player learn a deterministic
policy on its induced single-agent MDP with UCBVI-UPLOW, and accepts the best
improvement found if it beats ``eps/2`` by Monte Carlo estimate.

Single-agent MDPs are represented as one-player :class:`MarkovGame` objects.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .game import (
    MarkovGame,
    MarkovProductPolicy,
    joint_action_table,
    others_weights,
    product_sampler,
    rollout_returns,
    value_table,
)
from .rng import as_generator, as_streams
from .validation import ValidationError, check_player, check_policy, check_positive_int

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


# -- induced single-agent MDPs -----------------------------------------------

def mdp_view(game, policy, i, mode="exact"):
    """Player ``i``'s MDP when everybody else follows ``policy``.

    ``mode="exact"`` marginalizes opponents analytically and returns a
    one-player :class:`MarkovGame` (reward means only). ``mode="sampling"``
    returns a :class:`SamplingView` that draws the opponents' actions when the
    learner interacts with it.
    """
    check_policy(policy, game)
    i = check_player(i, game.m)
    if mode == "sampling":
        return SamplingView.from_game(game, policy, i)
    if mode != "exact":
        raise ValidationError(f"unknown view mode {mode!r}")
    table = game.joint_table
    onehot = np.eye(game.A[i])[table[:, i]]
    H, S, Ai = game.H, game.S, game.A[i]
    P = np.empty((H, S, Ai, S))
    R = np.empty((H, S, Ai, 1))
    for h in range(H):
        w = others_weights([d[h] for d in policy.dists], table, i)  # (S, J)
        P[h] = np.einsum("sj,ja,sjt->sat", w, onehot, game.P[h])
        R[h, :, :, 0] = np.einsum("sj,ja,sj->sa", w, onehot, game.R[h, :, :, i])
    return MarkovGame(P, R, (Ai,), s1=game.s1)


@dataclass
class SamplingView:
    """Sampling interface to player ``i``'s induced MDP.

    At every step the opponents' joint action ``o`` is drawn from
    ``others[h, s]``; the game's joint action is ``jmap[a, o]``.
    """

    cumP: np.ndarray      # (H, S, J, S) cumulative transitions
    R: np.ndarray         # (H, S, J) reward means of the learner
    bernoulli: np.ndarray  # (H, S, J)
    others: np.ndarray    # (H, S, O) opponents' joint-action law
    jmap: np.ndarray      # (A, O)
    s1: int

    H = property(lambda self: self.cumP.shape[0])
    S = property(lambda self: self.cumP.shape[1])
    A = property(lambda self: self.jmap.shape[0])

    @classmethod
    def from_game(cls, game, policy, i):
        A = game.A
        others_A = tuple(a for k, a in enumerate(A) if k != i)
        O = int(np.prod(others_A)) if others_A else 1
        otab = joint_action_table(others_A) if others_A else np.zeros((1, 0), dtype=int)
        strides = np.concatenate([[1], np.cumprod(A[:-1])]).astype(np.int64)
        other_ids = [k for k in range(game.m) if k != i]
        jmap = np.empty((A[i], O), dtype=np.int64)
        for a in range(A[i]):
            jmap[a] = a * strides[i] + (otab * strides[other_ids]).sum(axis=1)
        others = np.ones((game.H, game.S, O))
        for col, k in enumerate(other_ids):
            others *= policy.dists[k][:, :, otab[:, col]]
        return cls(np.cumsum(game.P, axis=-1), game.R[:, :, :, i].copy(),
                   game.bernoulli[:, :, :, i].copy(), others, jmap, game.s1)

    @classmethod
    def from_mdp(cls, mdp):
        """View of a one-player game (no opponents)."""
        if mdp.m != 1:
            raise ValidationError("from_mdp needs a one-player game")
        jmap = np.arange(mdp.A[0], dtype=np.int64)[:, None]
        return cls(np.cumsum(mdp.P, axis=-1), mdp.R[..., 0].copy(), mdp.bernoulli[..., 0].copy(),
                   np.ones((mdp.H, mdp.S, 1)), jmap, mdp.s1)

    def step(self, h, s, a, u):
        """One transition from three uniforms ``u``; returns ``(reward, next_state)``."""
        return _env_step(self.cumP, self.R, self.bernoulli, np.cumsum(self.others, axis=-1),
                         self.jmap, h, s, a, u[0], u[1], u[2])


def as_sampling_view(env):
    if isinstance(env, SamplingView):
        return env
    if isinstance(env, MarkovGame):
        return SamplingView.from_mdp(env)
    raise ValidationError(f"cannot interact with {type(env).__name__}")


def optimal_values(mdp):
    """Exact value iteration on a one-player game: ``(V (H+1, S), greedy (H, S))``."""
    H, S = mdp.H, mdp.S
    V = np.zeros((H + 1, S))
    act = np.zeros((H, S), dtype=np.int64)
    for h in reversed(range(H)):
        Q = mdp.R[h, :, :, 0] + mdp.P[h] @ V[h + 1]
        act[h] = Q.argmax(axis=1)
        V[h] = Q.max(axis=1)
    return V, act


def deterministic_policy(actions, A):
    """One-hot ``(H, S, A)`` table from an ``(H, S)`` action table."""
    return np.eye(A)[np.asarray(actions, dtype=np.int64)]


# -- UCBVI-UPLOW -------------------------------------------------------------

def bernstein_bonus(t, var, c, iota, H, S):
    """``c (sqrt(var * iota / t) + H^2 S iota / t)``."""
    if t < 1 or var < 0:
        raise ValidationError("need t >= 1 and a nonnegative variance")
    return c * (math.sqrt(var * iota / t) + H * H * S * iota / t)


def _env_step(cumP, R, bern, others_cdf, jmap, h, s, a, u_opp, u_rew, u_next):
    O = others_cdf.shape[2]
    o = 0
    thresh = u_opp * others_cdf[h, s, O - 1]
    while o < O - 1 and others_cdf[h, s, o] <= thresh:
        o += 1
    j = jmap[a, o]
    mean = R[h, s, j]
    if bern[h, s, j]:
        r = 1.0 if u_rew < mean else 0.0
    else:
        r = mean
    S = cumP.shape[3]
    nxt = 0
    while nxt < S - 1 and cumP[h, s, j, nxt] <= u_next:
        nxt += 1
    return r, nxt


def _ucbvi_loop(cumP, R, bern, others_cdf, jmap, s1, uniforms, c, iota,
                Qu, Ql, N, Nsas, Rsum, upper0, lower0, best_pi):
    """Run all episodes; fills the snapshot arrays and returns ``k_star``."""
    H, S, A = N.shape
    Vu = np.zeros((H + 1, S))
    Vl = np.zeros((H + 1, S))
    pi = np.zeros((H, S), dtype=np.int64)
    K = uniforms.shape[0]
    best_gap = np.inf
    k_star = 0
    for k in range(K):
        for h in range(H - 1, -1, -1):
            for s in range(S):
                for a in range(A):
                    t = N[h, s, a]
                    if t > 0:
                        pu = 0.0
                        pl = 0.0
                        pm = 0.0
                        pm2 = 0.0
                        pd = 0.0
                        for s2 in range(S):
                            p = Nsas[h, s, a, s2] / t
                            if p > 0.0:
                                vu = Vu[h + 1, s2]
                                vl = Vl[h + 1, s2]
                                mid = 0.5 * (vu + vl)
                                pu += p * vu
                                pl += p * vl
                                pm += p * mid
                                pm2 += p * mid * mid
                                pd += p * (vu - vl)
                        var = pm2 - pm * pm
                        if var < 0.0:
                            var = 0.0
                        beta = c * (math.sqrt(var * iota / t) + H * H * S * iota / t)
                        gamma = (c / H) * pd
                        r = Rsum[h, s, a] / t
                        qu = r + pu + gamma + beta
                        ql = r + pl - gamma - beta
                        Qu[h, s, a] = qu if qu < H else H
                        Ql[h, s, a] = ql if ql > 0.0 else 0.0
                best = 0
                for a in range(1, A):
                    if Qu[h, s, a] > Qu[h, s, best]:
                        best = a
                pi[h, s] = best
                Vu[h, s] = Qu[h, s, best]
                Vl[h, s] = Ql[h, s, best]
        upper0[k] = Vu[0, s1]
        lower0[k] = Vl[0, s1]
        gap = Vu[0, s1] - Vl[0, s1]
        if gap < best_gap:
            best_gap = gap
            k_star = k
            best_pi[:, :] = pi
        s = s1
        for h in range(H):
            a = pi[h, s]
            r, nxt = _env_step(cumP, R, bern, others_cdf, jmap, h, s, a,
                               uniforms[k, h, 0], uniforms[k, h, 1], uniforms[k, h, 2])
            N[h, s, a] += 1
            Nsas[h, s, a, nxt] += 1
            Rsum[h, s, a] += r
            s = nxt
    return k_star


# the interpreted loop stays available as a slow reference path
_ucbvi_loop_python = _ucbvi_loop
if numba is not None:
    _env_step = numba.njit(cache=True)(_env_step)
    _ucbvi_loop_fast = numba.njit(cache=True)(_ucbvi_loop)
else:  # pragma: no cover
    _ucbvi_loop_fast = _ucbvi_loop


@dataclass
class UcbviResult:
    """Output of :func:`ucbvi_uplow`."""

    actions: np.ndarray   # (H, S) returned deterministic policy
    k_star: int
    upper: np.ndarray     # (K,) upper estimate at s1, start of each episode
    lower: np.ndarray
    Q_upper: np.ndarray
    Q_lower: np.ndarray
    counts: np.ndarray
    iota: float

    def policy_table(self):
        return deterministic_policy(self.actions, self.Q_upper.shape[-1])


def ucbvi_uplow(env, K, c=0.1, iota=None, p=0.05, rng=None, backend="fast"):
    """Learn a deterministic policy with upper/lower confidence value iteration.

    ``env`` is a :class:`SamplingView` or a one-player :class:`MarkovGame`.
    Every episode re-solves all ``(h, s, a)`` with at least one visit, acts
    greedily on the upper estimate (lowest index on ties) and records the
    bracket at ``s1``; the policy from the episode with the narrowest bracket
    is returned. Rewards are estimated by their empirical means.
    """
    view = as_sampling_view(env)
    K = check_positive_int(K, "K")
    H, S, A = view.H, view.S, view.A
    if iota is None:
        iota = math.log(S * A * H * K / p)
    uniforms = as_generator(rng).random((K, H, 3))
    Qu = np.full((H, S, A), float(H))
    Ql = np.zeros((H, S, A))
    N = np.zeros((H, S, A), dtype=np.int64)
    Nsas = np.zeros((H, S, A, S), dtype=np.int64)
    Rsum = np.zeros((H, S, A))
    upper = np.empty(K)
    lower = np.empty(K)
    best_pi = np.zeros((H, S), dtype=np.int64)
    loop = {"fast": _ucbvi_loop_fast, "python": _ucbvi_loop_python}[backend]
    k_star = loop(view.cumP, view.R, view.bernoulli, np.cumsum(view.others, axis=-1),
                  view.jmap, int(view.s1), uniforms, float(c), float(iota),
                  Qu, Ql, N, Nsas, Rsum, upper, lower, best_pi)
    return UcbviResult(best_pi, int(k_star), upper, lower, Qu, Ql, N, float(iota))


class UCBVIUpLow(BaseEstimator):
    """Estimator wrapper: ``fit(env)`` sets ``result_`` and ``policy_``."""

    def __init__(self, K=1000, c=0.1, iota=None, p=0.05, random_state=None):
        self.K = K
        self.c = c
        self.iota = iota
        self.p = p
        self.random_state = random_state

    def fit(self, env, y=None):
        check_positive_int(self.K, "K")
        if not self.c > 0 or not 0 < self.p < 1:
            raise ValidationError("need c > 0 and 0 < p < 1")
        self.result_ = ucbvi_uplow(env, self.K, self.c, self.iota, self.p, self.random_state)
        self.policy_ = self.result_.actions
        return self

    def predict(self, X):
        """Greedy action for each ``(h, s)`` row of ``X``."""
        check_is_fitted(self, "policy_")
        X = np.asarray(X, dtype=np.int64).reshape(-1, 2)
        return self.policy_[X[:, 0], X[:, 1]]


# -- Monte Carlo evaluation ----------------------------------------------------

def monte_carlo_value(game, policy, N, rng=None):
    """Mean episode return per player over ``N`` episodes and its standard error."""
    N = check_positive_int(N, "N")
    check_policy(policy, game)
    ret = rollout_returns(game, product_sampler(game, policy), N, as_generator(rng))
    mean = ret.mean(axis=0)
    se = ret.std(axis=0, ddof=1) / math.sqrt(N) if N > 1 else np.zeros(game.m)
    return mean, se


# -- Nash coordinate ascent ----------------------------------------------------

@dataclass
class NashCaConfig:
    """Tolerances and sample sizes of :func:`nash_ca`.

    ``N = ceil(n_mult H^2 iota / eps^2)`` evaluation episodes and
    ``K_i = ceil(k_mult H^3 S A_i iota / eps^2)`` learner episodes, with
    ``iota = log(m H S max A_i / (eps p))`` unless given.
    """

    epsilon: float
    p: float = 0.05
    n_mult: float = 4.0
    k_mult: float = 2.0
    c: float = 0.1
    iota: float = None
    phi_max: float = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if not 0 < self.p < 1:
            raise ValidationError("p must lie in (0, 1)")
        if not (self.n_mult > 0 and self.k_mult > 0 and self.c > 0):
            raise ValidationError("multipliers and c must be positive")

    def resolve(self, game):
        iota = self.iota
        if iota is None:
            iota = math.log(game.m * game.H * game.S * max(game.A) / (self.epsilon * self.p))
        H, S, eps = game.H, game.S, self.epsilon
        N = math.ceil(self.n_mult * H * H * iota / eps**2)
        K = [math.ceil(self.k_mult * H**3 * S * a * iota / eps**2) for a in game.A]
        phi_max = game.m * H if self.phi_max is None else self.phi_max
        cap = math.ceil(4 * phi_max / eps)
        return iota, N, K, cap


@dataclass
class NashCaResult:
    policy: MarkovProductPolicy
    certified: bool
    iterations: int
    audit: list = field(default_factory=list)
    episodes: int = 0
    cap: int = 0

    def write_audit(self, path):
        """CSV with one row per while-loop iteration."""
        cols = ["iteration", "player", "delta", "value_before", "value_after",
                "episodes", "accepted"]
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(cols)
            for row in self.audit:
                wr.writerow([row[c] if not isinstance(row[c], float) else repr(row[c]) for c in cols])


def nash_ca(game, config, rng=None):
    """Nash coordinate ascent starting from every player's first action."""
    streams = as_streams(rng)
    iota, N, K, cap = config.resolve(game)
    actions = [np.zeros((game.H, game.S), dtype=np.int64) for _ in range(game.m)]

    def as_policy(acts):
        return MarkovProductPolicy([deterministic_policy(a, game.A[i]) for i, a in enumerate(acts)])

    audit = []
    episodes = 0
    for it in range(cap):
        pi = as_policy(actions)
        base, _ = monte_carlo_value(game, pi, N, streams.get("nash-ca", "estimate", it))
        episodes += N
        deltas = np.empty(game.m)
        cand, after = [], []
        for i in range(game.m):
            view = mdp_view(game, pi, i, mode="sampling")
            res = ucbvi_uplow(view, K[i], config.c, rng=streams.get("nash-ca", "learn", it, i))
            new = list(actions)
            new[i] = res.actions
            val, _ = monte_carlo_value(game, as_policy(new), N, streams.get("nash-ca", "estimate", it, i))
            episodes += K[i] + N
            cand.append(res.actions)
            after.append(val[i])
            deltas[i] = val[i] - base[i]
        j = int(np.argmax(deltas))
        accepted = bool(deltas[j] > config.epsilon / 2)
        audit.append({"iteration": it, "player": j, "delta": float(deltas[j]),
                      "deltas": deltas.tolist(), "value_before": float(base[j]),
                      "value_after": float(after[j]), "episodes": episodes,
                      "accepted": accepted, "actions": [a.copy() for a in actions]})
        if not accepted:
            return NashCaResult(pi, True, it + 1, audit, episodes, cap)
        actions[j] = cand[j]
    return NashCaResult(as_policy(actions), False, cap, audit, episodes, cap)


class NashCA(BaseEstimator):
    """Estimator wrapper around :func:`nash_ca`."""

    def __init__(self, epsilon=0.15, p=0.05, n_mult=4.0, k_mult=2.0, c=0.1, iota=None,
                 phi_max=None, random_state=None):
        self.epsilon = epsilon
        self.p = p
        self.n_mult = n_mult
        self.k_mult = k_mult
        self.c = c
        self.iota = iota
        self.phi_max = phi_max
        self.random_state = random_state

    def fit(self, game, y=None):
        cfg = NashCaConfig(self.epsilon, self.p, self.n_mult, self.k_mult, self.c,
                           self.iota, self.phi_max)
        self.result_ = nash_ca(game, cfg, self.random_state)
        self.policy_ = self.result_.policy
        return self


def potential_identity_residual(game, pi, i, alt_dist):
    """``|(V_i(pi) - V_i(alt, pi_-i)) - (Phi(pi) - Phi(alt, pi_-i))|`` with
    ``Phi = V_0`` (the common value of a cooperative game)."""
    other = pi.replace(i, alt_dist)
    v, w = value_table(game, pi)[0, game.s1], value_table(game, other)[0, game.s1]
    return abs((v[i] - w[i]) - (v[0] - w[0]))
