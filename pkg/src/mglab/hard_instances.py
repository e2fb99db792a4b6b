"""Hard one-step games built from covering codes, and a KL decomposition checker.

Joint actions are bit strings (binary case) or strings over ``{0..2k-1}``;
as everywhere in the package, player 0 is the least significant digit of
the encoded joint-action index.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .game import MarkovGame, embed_one_step_game, game_to_json
from .validation import MAX_JOINT_ACTIONS, CapExceededError, ValidationError

MAX_KL_ENUMERATION = 2**20


# -- covering codes ------------------------------------------------------------

def hamming_code(k):
    """All codewords of the perfect Hamming code of length ``2^k - 1``, shape ``(2^(n-k), n)``.

    Position ``p`` (1-based) has parity-check column ``binary(p)``; the
    codewords are the kernel of that matrix over GF(2). Positions ``2^r``
    hold the check bits and are solved for from the free data bits.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    n = 2**k - 1
    pos = np.arange(1, n + 1)
    is_check = (pos & (pos - 1)) == 0
    data_pos = pos[~is_check]
    n_data = len(data_pos)
    data = ((np.arange(2**n_data)[:, None] >> np.arange(n_data)[::-1]) & 1).astype(np.int8)
    words = np.zeros((2**n_data, n), dtype=np.int8)
    words[:, data_pos - 1] = data
    for r in range(k):
        covered = (data_pos >> r) & 1 == 1
        words[:, 2**r - 1] = data[:, covered].sum(axis=1) % 2
    return words


def parity_check_matrix(k):
    """``(k, 2^k - 1)`` matrix whose column ``p-1`` is ``p`` in binary."""
    pos = np.arange(1, 2**k)
    return ((pos[None, :] >> np.arange(k)[:, None]) & 1).astype(np.int8)


def hamming_one_net(m):
    """A radius-1 cover of ``{0,1}^m`` of size at most ``2^(m+1)/m``.

    Uses the Hamming code on the largest ``2^k - 1 <= m`` coordinates and
    appends every possible suffix on the remaining ones. Rows are sorted.
    """
    if m < 1:
        raise ValidationError("m must be >= 1")
    k = int(math.floor(math.log2(m + 1)))
    base = hamming_code(k)
    extra = m - base.shape[1]
    if extra:
        suffix = ((np.arange(2**extra)[:, None] >> np.arange(extra)[::-1]) & 1).astype(np.int8)
        base = np.concatenate([np.repeat(base, len(suffix), axis=0),
                               np.tile(suffix, (len(base), 1))], axis=1)
    return _sorted_rows(base)


def block_one_net(m, k):
    """A radius-1 cover of ``{0..2k-1}^m`` of size at most ``2(2k)^m/(km)``.

    Action ``a`` lies in block ``a // 2``; blocks whose 1-based indices sum
    to a multiple of ``k`` each receive a translated binary cover.
    """
    if m < 1 or k < 1:
        raise ValidationError("need m >= 1 and k >= 1")
    if (2 * k) ** m > MAX_JOINT_ACTIONS:
        raise CapExceededError(f"(2k)^m = {(2 * k) ** m} exceeds {MAX_JOINT_ACTIONS}")
    binary = hamming_one_net(m).astype(np.int64)
    if k == 1:
        return binary
    blocks = np.indices((k,) * m).reshape(m, -1).T.astype(np.int64)
    blocks = blocks[(blocks + 1).sum(axis=1) % k == 0]
    net = (2 * blocks[:, None, :] + binary[None, :, :]).reshape(-1, m)
    return _sorted_rows(net)


def _sorted_rows(x):
    return x[np.lexsort(x.T[::-1])]


def is_one_net(net, A):
    """Brute force: every point of ``prod(A)`` is within Hamming distance 1 of ``net``."""
    A = tuple(int(a) for a in A)
    J = int(np.prod(A))
    if J > MAX_JOINT_ACTIONS:
        raise CapExceededError(f"{J} joint actions exceed {MAX_JOINT_ACTIONS}")
    covered = np.zeros(J, dtype=bool)
    idx = joint_indices(net, A)
    covered[idx] = True
    strides = np.concatenate([[1], np.cumprod(A[:-1])]).astype(np.int64)
    net = np.asarray(net, dtype=np.int64)
    for i, a in enumerate(A):
        base = idx - net[:, i] * strides[i]
        covered[base[:, None] + np.arange(a) * strides[i]] = True
    return bool(covered.all())


def joint_indices(rows, A):
    """Encoded joint-action index of every row."""
    rows = np.asarray(rows, dtype=np.int64)
    strides = np.concatenate([[1], np.cumprod(A[:-1])]).astype(np.int64)
    return rows @ strides


def hamming_distance(x, y):
    return int(np.count_nonzero(np.asarray(x) != np.asarray(y)))


# -- the hard game family ------------------------------------------------------

@dataclass(frozen=True)
class OneStepHardGame:
    """Bernoulli game with identical means ``1/2 + eps * 1{a in D}`` for every player."""

    A: tuple
    D: tuple
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "A", tuple(int(a) for a in self.A))
        object.__setattr__(self, "D", tuple(sorted(int(j) for j in self.D)))
        if not 0.0 <= self.epsilon <= 0.4:
            raise ValidationError("epsilon must lie in [0, 0.4]")
        if self.n_joint > MAX_JOINT_ACTIONS:
            raise CapExceededError(f"{self.n_joint} joint actions exceed {MAX_JOINT_ACTIONS}")
        if any(not 0 <= j < self.n_joint for j in self.D):
            raise ValidationError("good-set index out of range")

    m = property(lambda self: len(self.A))
    n_joint = property(lambda self: int(np.prod(self.A)))

    @property
    def good(self):
        mask = np.zeros(self.n_joint, dtype=bool)
        mask[list(self.D)] = True
        return mask

    @property
    def means(self):
        """``(J, m)`` mean table; all players share the same column."""
        col = 0.5 + self.epsilon * self.good
        return np.repeat(col[:, None], self.m, axis=1)

    def to_markov_game(self):
        """The same game as a one-state, one-step Markov game with Bernoulli rewards."""
        J = self.n_joint
        return MarkovGame(np.ones((1, 1, J, 1)), self.means[None, None], self.A, bernoulli=True)

    def embed(self, H):
        """Three-state H-step version (see :func:`mglab.game.embed_one_step_game`)."""
        return embed_one_step_game(self, H)

    def permute(self, perms):
        return permute_game(self, perms)


def build_hard_game(net, epsilon, A=None):
    """Hard game whose good set is ``net`` (rows of actions or joint indices)."""
    net = np.asarray(net, dtype=np.int64)
    if net.ndim == 2:
        if A is None:
            top = int(net.max()) + 1 if net.size else 2
            A = (2 if top <= 2 else top + top % 2,) * net.shape[1]
        D = joint_indices(net, A)
    else:
        if A is None:
            raise ValidationError("joint indices need explicit action counts")
        D = net
    g = OneStepHardGame(tuple(A), tuple(int(j) for j in D), float(epsilon))
    if g.m < 4:
        warnings.warn("fewer than 4 players: the good set may cover half the joint actions",
                      stacklevel=2)
    return g


def hard_game(m, k, epsilon):
    """Hard game on ``{0..2k-1}^m`` from :func:`block_one_net`."""
    return build_hard_game(block_one_net(m, k), epsilon, A=(2 * k,) * m)


def permute_game(g, perms):
    """Relabel actions: player ``i``'s action ``a`` becomes ``perms[i][a]``."""
    perms = [np.asarray(p, dtype=np.int64) for p in perms]
    if len(perms) != g.m or any(sorted(p.tolist()) != list(range(a)) for p, a in zip(perms, g.A)):
        raise ValidationError("need one permutation of range(A_i) per player")
    rows = np.stack(np.unravel_index(np.asarray(g.D, dtype=np.int64), g.A, order="F"), axis=1)
    new = np.stack([perms[i][rows[:, i]] for i in range(g.m)], axis=1)
    return OneStepHardGame(g.A, tuple(joint_indices(new, g.A).tolist()), g.epsilon)


def verify_pure_ne_set(means, A=None):
    """Sorted joint indices at which no player gains by a unilateral switch.

    ``means`` is a ``(J, m)`` table of reward means (or a
    :class:`OneStepHardGame`, in which case ``A`` may be None).
    """
    if isinstance(means, OneStepHardGame):
        A, means = means.A, means.means
    A = tuple(int(a) for a in A)
    means = np.asarray(means, dtype=float)
    J, m = means.shape
    if J > MAX_JOINT_ACTIONS:
        raise CapExceededError(f"{J} joint actions exceed {MAX_JOINT_ACTIONS}")
    ok = np.ones(J, dtype=bool)
    for i in range(m):
        r = means[:, i].reshape(A, order="F")
        best = np.broadcast_to(r.max(axis=i, keepdims=True), r.shape)
        ok &= (r >= best).reshape(-1, order="F")
    return np.flatnonzero(ok)


def hard_game_to_json(g, H=None):
    """JSON document of the one-step game (or its H-step embedding) with a ``D`` field."""
    game = g.to_markov_game() if H is None else g.embed(H)
    return game_to_json(game, D=list(g.D), epsilon=g.epsilon)


# -- KL divergences ------------------------------------------------------------

def bernoulli_kl(p, q):
    """``kl(Bern(p) || Bern(q))`` for ``p, q`` in the open unit interval."""
    if not (0 < p < 1 and 0 < q < 1):
        raise ValidationError("Bernoulli KL needs p, q in (0, 1)")
    return p * math.log(p / q) + (1 - p) * math.log((1 - p) / (1 - q))


def kl_half_eps(epsilon):
    """``kl(Bern(1/2) || Bern(1/2 + eps)) = log(1 / (1 - 4 eps^2)) / 2``."""
    return 0.5 * math.log(1.0 / (1.0 - 4.0 * epsilon**2))


def kl_decomposition_check(P, Q, rule, n, seeds=None):
    """Both sides of the KL decomposition for an adaptive Bernoulli bandit run.

    ``rule(history)`` (or ``rule(history, seed)`` when ``seeds`` is given)
    returns the next action from the tuple of past ``(action, reward)``
    pairs. The left side is the KL between the laws of the whole trajectory
    under means ``P`` and ``Q``, by exhaustive enumeration; the right side is
    ``sum_a E_P[N(a)] kl(P(a) || Q(a))`` with counts from the same enumeration.
    Seeds are drawn uniformly and are part of the trajectory.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape or P.ndim != 1:
        raise ValidationError("P and Q must be equal-length vectors")
    if np.any((P <= 0) | (P >= 1) | (Q <= 0) | (Q >= 1)):
        raise ValidationError("means must lie in (0, 1)")
    seed_list = [None] if seeds is None else list(seeds)
    if len(seed_list) * 2**n > MAX_KL_ENUMERATION:
        raise CapExceededError(f"{len(seed_list)} * 2^{n} trajectories exceed {MAX_KL_ENUMERATION}")
    lhs = 0.0
    visits = np.zeros(len(P))
    w = 1.0 / len(seed_list)
    for seed in seed_list:
        call = rule if seed is None else (lambda hist, _s=seed: rule(hist, _s))
        stack = [((), 1.0, 0.0)]  # (history, prob under P, log-likelihood ratio)
        while stack:
            hist, p, llr = stack.pop()
            if len(hist) == n:
                lhs += w * p * llr
                continue
            a = int(call(hist))
            visits[a] += w * p
            for r in (1, 0):
                pa = P[a] if r else 1 - P[a]
                qa = Q[a] if r else 1 - Q[a]
                stack.append((hist + ((a, r),), p * pa, llr + math.log(pa / qa)))
    rhs = float(sum(visits[a] * bernoulli_kl(P[a], Q[a]) for a in range(len(P))))
    return float(lhs), rhs


def random_history_rule(n_actions, rng):
    """A deterministic adaptive rule: each new history gets a random action, memoized."""
    table = {}

    def rule(hist):
        if hist not in table:
            table[hist] = int(rng.integers(n_actions))
        return table[hist]

    return rule


def switch_after_zero_rule(hist):
    """Start with action 0; switch action after every zero reward."""
    a = 0
    for _, r in hist:
        if r == 0:
            a = 1 - a
    return a
