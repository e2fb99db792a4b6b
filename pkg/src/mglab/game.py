"""Tabular episodic Markov games, product policies and exact Bellman machinery.

Joint actions are encoded as a single mixed-radix integer with player 0 as the
least significant digit, i.e. ``j = a_0 + A_0 * (a_1 + A_1 * (a_2 + ...))``.
Steps ``h`` and states ``s`` are 0-based throughout.
"""

import json
from dataclasses import dataclass, field
from functools import cached_property, reduce

import numpy as np

from .validation import (
    MAX_STATE_STEPS,
    CapExceededError,
    ValidationError,
    check_action_counts,
    check_distribution,
    check_player,
    check_policy,
    check_unit_interval,
)

SCHEMA_VERSION = 1


def encode_joint(actions, A):
    """Mixed-radix index of a joint action (player 0 least significant)."""
    return int(np.ravel_multi_index(tuple(int(a) for a in actions), A, order="F"))


def decode_joint(j, A):
    """Inverse of :func:`encode_joint`."""
    return tuple(int(a) for a in np.unravel_index(int(j), A, order="F"))


def joint_action_table(A):
    """Array of shape ``(prod(A), m)``; row ``j`` is the decoded joint action."""
    J = int(np.prod(A))
    return np.stack(np.unravel_index(np.arange(J), A, order="F"), axis=1)


def joint_strides(A):
    return np.concatenate([[1], np.cumprod(A[:-1])]).astype(np.int64)


def product_distribution(dists):
    """Joint distribution over encoded actions from per-player marginals.

    ``dists[i]`` may carry leading batch axes; the result has the same batch
    axes and a last axis of size ``prod(A)``.
    """
    def outer(acc, p):
        return (p[..., :, None] * acc[..., None, :]).reshape(p.shape[:-1] + (p.shape[-1] * acc.shape[-1],))

    return reduce(outer, dists[1:], np.asarray(dists[0], dtype=float))


@dataclass(frozen=True)
class RewardSpec:
    """Reward of one player at one (step, state, joint action)."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("deterministic", "bernoulli"):
            raise ValidationError(f"unknown reward kind {self.kind!r}")
        if not 0.0 <= self.value <= 1.0:
            raise ValidationError("reward mean must lie in [0, 1]")

    @property
    def mean(self):
        return self.value


class MarkovGame:
    """Finite-horizon tabular Markov game with dense tensors.

    Parameters
    ----------
    P : array, shape (H, S, J, S)
        Transition probabilities over next states.
    R : array, shape (H, S, J, m)
        Reward means in [0, 1].
    A : sequence of int
        Per-player action counts; ``J = prod(A)``.
    bernoulli : bool or bool array of R's shape, default False
        Which reward entries are Bernoulli draws rather than deterministic.
    s1 : int
        Initial state.
    """

    def __init__(self, P, R, A, bernoulli=False, s1=0):
        A = check_action_counts(A)
        P = np.array(P, dtype=float)
        R = np.array(R, dtype=float)
        J = int(np.prod(A))
        if P.ndim != 4 or P.shape[2] != J or P.shape[1] != P.shape[3]:
            raise ValidationError(f"P must have shape (H, S, {J}, S), got {P.shape}")
        H, S = P.shape[:2]
        if H < 1 or S < 1:
            raise ValidationError("need H >= 1 and S >= 1")
        if H * S > MAX_STATE_STEPS:
            raise CapExceededError(f"S*H = {S * H} exceeds cap {MAX_STATE_STEPS}")
        if R.shape != (H, S, J, len(A)):
            raise ValidationError(f"R must have shape {(H, S, J, len(A))}, got {R.shape}")
        check_distribution(P, name="transition")
        check_unit_interval(R, "reward means")
        bern = np.broadcast_to(np.asarray(bernoulli, dtype=bool), R.shape).copy()
        if not 0 <= int(s1) < S:
            raise ValidationError(f"initial state {s1} out of range")
        for arr in (P, R, bern):
            arr.setflags(write=False)
        self.P, self.R, self.bernoulli = P, R, bern
        self.A = A
        self.s1 = int(s1)

    m = property(lambda self: len(self.A))
    H = property(lambda self: self.P.shape[0])
    S = property(lambda self: self.P.shape[1])
    n_joint = property(lambda self: self.P.shape[2])

    @cached_property
    def joint_table(self):
        t = joint_action_table(self.A)
        t.setflags(write=False)
        return t

    @cached_property
    def is_cooperative(self):
        return bool(np.all(self.R == self.R[..., :1]) and
                    np.all(self.bernoulli == self.bernoulli[..., :1]))

    def reward_spec(self, h, s, j, i):
        kind = "bernoulli" if self.bernoulli[h, s, j, i] else "deterministic"
        return RewardSpec(kind, float(self.R[h, s, j, i]))

    def encode(self, actions):
        return encode_joint(actions, self.A)

    def decode(self, j):
        return decode_joint(j, self.A)

    def __eq__(self, other):
        if not isinstance(other, MarkovGame):
            return NotImplemented
        return (self.A == other.A and self.s1 == other.s1
                and np.array_equal(self.P, other.P) and np.array_equal(self.R, other.R)
                and np.array_equal(self.bernoulli, other.bernoulli))

    __hash__ = None

    def __repr__(self):
        return f"MarkovGame(m={self.m}, H={self.H}, S={self.S}, A={self.A})"

    @classmethod
    def random(cls, m, S, H, A, rng=None, bernoulli=False, cooperative=False):
        """A random game with Dirichlet(1) transitions and uniform reward means."""
        rng = np.random.default_rng(rng)
        A = check_action_counts(np.broadcast_to(A, (m,)))
        J = int(np.prod(A))
        P = rng.dirichlet(np.ones(S), size=(H, S, J))
        if cooperative:
            R = np.repeat(rng.uniform(size=(H, S, J, 1)), m, axis=-1)
        else:
            R = rng.uniform(size=(H, S, J, m))
        return cls(P, R, A, bernoulli=bernoulli)


class MarkovProductPolicy:
    """Independent Markov policies, one probability table ``(H, S, A_i)`` per player."""

    def __init__(self, dists):
        dists = [np.array(d, dtype=float) for d in dists]
        if not dists:
            raise ValidationError("need at least one player")
        for d in dists:
            if d.ndim != 3 or d.shape[:2] != dists[0].shape[:2]:
                raise ValidationError("each player's table must have shape (H, S, A_i)")
            check_distribution(d, name="policy")
            d.setflags(write=False)
        self.dists = dists

    m = property(lambda self: len(self.dists))
    A = property(lambda self: tuple(d.shape[2] for d in self.dists))

    @classmethod
    def uniform(cls, game):
        return cls([np.full((game.H, game.S, a), 1.0 / a) for a in game.A])

    @classmethod
    def from_actions(cls, actions, A):
        """Pure policy from per-player integer tables of shape ``(H, S)``."""
        return cls([np.eye(a)[np.asarray(act, dtype=int)] for act, a in zip(actions, A)])

    @classmethod
    def constant(cls, game, joint_action):
        """Pure policy playing the same joint action (index or tuple) everywhere."""
        if np.ndim(joint_action) == 0:
            joint_action = decode_joint(joint_action, game.A)
        acts = [np.full((game.H, game.S), a, dtype=int) for a in joint_action]
        return cls.from_actions(acts, game.A)

    @property
    def is_pure(self):
        return all(np.all((d == 0) | (d == 1)) for d in self.dists)

    def actions(self):
        """Per-player ``(H, S)`` action tables of a pure policy."""
        if not self.is_pure:
            raise ValidationError("policy is not pure")
        return [d.argmax(axis=-1) for d in self.dists]

    def replace(self, i, dist_i):
        """Copy with player ``i``'s table swapped out."""
        dists = list(self.dists)
        dists[i] = dist_i
        return MarkovProductPolicy(dists)

    def joint(self, h):
        """Joint distribution at step ``h`` for every state, shape ``(S, J)``."""
        return product_distribution([d[h] for d in self.dists])

    def __eq__(self, other):
        if not isinstance(other, MarkovProductPolicy):
            return NotImplemented
        return self.m == other.m and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.dists, other.dists))

    __hash__ = None


@dataclass
class EpisodeTrace:
    """One episode: ``states`` has H+1 entries, ``actions``/``rewards`` have H rows."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    joint: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.actions)

    @property
    def returns(self):
        return self.rewards.sum(axis=0)


def realize_rewards(game, h, s, j, u):
    """Realized rewards for arrays of states/joint actions given uniforms ``u``."""
    means = game.R[h, s, j]
    return np.where(game.bernoulli[h, s, j], (u < means).astype(float), means)


def sample_next_state(game, h, s, j, u):
    cum = np.cumsum(game.P[h, s, j], axis=-1)
    nxt = (cum < u[..., None]).sum(axis=-1)
    return np.minimum(nxt, game.S - 1)


def sample_episode(game, actor, rng):
    """Play one episode.

    ``actor(h, s)`` returns either a joint-action index or a sequence of
    per-player actions. ``rng`` supplies reward noise and transitions.
    """
    H, m = game.H, game.m
    states = np.empty(H + 1, dtype=np.int64)
    actions = np.empty((H, m), dtype=np.int64)
    joint = np.empty(H, dtype=np.int64)
    rewards = np.empty((H, m))
    s = states[0] = game.s1
    for h in range(H):
        a = actor(h, s)
        j = int(a) if np.ndim(a) == 0 else game.encode(a)
        joint[h] = j
        actions[h] = game.joint_table[j]
        rewards[h] = realize_rewards(game, h, s, j, rng.random(m))
        s = states[h + 1] = int(sample_next_state(game, h, s, j, np.asarray(rng.random())))
    return EpisodeTrace(states, actions, rewards, joint)


def sample_from_rows(probs, u):
    """Vectorized inverse-CDF sampling, one draw per row of ``probs``."""
    cum = np.cumsum(probs, axis=-1)
    idx = (cum < u[:, None] * cum[:, -1:]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def rollout_returns(game, joint_sampler, n, rng):
    """Simulate ``n`` episodes in lockstep and return per-player returns ``(n, m)``.

    ``joint_sampler(h, states, rng)`` maps an array of current states to an
    array of joint-action indices.
    """
    s = np.full(n, game.s1, dtype=np.int64)
    total = np.zeros((n, game.m))
    for h in range(game.H):
        j = joint_sampler(h, s, rng)
        total += realize_rewards(game, h, s, j, rng.random((n, game.m)))
        s = sample_next_state(game, h, s, j, rng.random(n))
    return total


def product_sampler(game, policy):
    """Batch joint-action sampler for a product policy."""
    strides = joint_strides(game.A)

    def sample(h, s, rng):
        j = np.zeros(len(s), dtype=np.int64)
        for i, d in enumerate(policy.dists):
            j += strides[i] * sample_from_rows(d[h, s], rng.random(len(s)))
        return j

    return sample


def value_table(game, policy):
    """Per-player values ``V[h, s, i]`` with ``V[H] = 0`` (shape ``(H+1, S, m)``)."""
    check_policy(policy, game)
    V = np.zeros((game.H + 1, game.S, game.m))
    for h in reversed(range(game.H)):
        Q = game.R[h] + np.einsum("sjt,ti->sji", game.P[h], V[h + 1])
        V[h] = np.einsum("sj,sji->si", policy.joint(h), Q)
    return V


def exact_value(game, policy):
    """Per-player value at the initial state under a product policy."""
    return value_table(game, policy)[0, game.s1]


def others_weights(dists_at_h, table, i):
    """Probability of the opponents' part of each joint action, shape ``(S, J)``."""
    w = np.ones((dists_at_h[0].shape[0], table.shape[0]))
    for k, d in enumerate(dists_at_h):
        if k != i:
            w *= d[:, table[:, k]]
    return w


def deviation_q(game, dists_at_h, h, i, target):
    """``Q[s, a_i] = E_{a_-i}[target[s, (a_i, a_-i)]]`` with opponents marginalized."""
    table = game.joint_table
    onehot = np.eye(game.A[i])[table[:, i]]
    return (others_weights(dists_at_h, table, i) * target) @ onehot


def best_response_table(game, policy, i):
    """Best-response values ``(H+1, S)`` and the greedy action table ``(H, S)``."""
    check_policy(policy, game)
    i = check_player(i, game.m)
    V = np.zeros((game.H + 1, game.S))
    act = np.zeros((game.H, game.S), dtype=np.int64)
    for h in reversed(range(game.H)):
        target = game.R[h, :, :, i] + game.P[h] @ V[h + 1]
        q = deviation_q(game, [d[h] for d in policy.dists], h, i, target)
        act[h] = q.argmax(axis=1)
        V[h] = q.max(axis=1)
    return V, act


def best_response_value(game, policy, i):
    """Best-response value of player ``i`` and a deterministic policy attaining it.

    Returns ``(value, table)`` where ``table`` is the ``(H, S, A_i)`` one-hot policy.
    Ties go to the lowest action index.
    """
    V, act = best_response_table(game, policy, i)
    return float(V[0, game.s1]), np.eye(game.A[i])[act]


def ne_gap(game, policy):
    """``max_i`` of best-response value minus achieved value at the initial state."""
    values = exact_value(game, policy)
    return max(best_response_value(game, policy, i)[0] - values[i] for i in range(game.m))


S_INIT, S_PLUS, S_MINUS = 0, 1, 2


def embed_one_step_game(g, H, epsilon=None):
    """Embed a one-step game with good set ``g.D`` into a 3-state H-step game.

    From the initial state, joint actions in ``g.D`` move to the rewarding
    absorbing state with probability ``1/2 + eps/(2(H-1))``, all others with
    probability 1/2. Every player earns 1 per step spent in that state after
    step 1, so the game is cooperative.
    """
    if H < 2:
        raise ValidationError("embedding needs H >= 2")
    eps = g.epsilon if epsilon is None else float(epsilon)
    bump = eps / (2 * (H - 1))
    if not 0 <= 0.5 + bump <= 1 or bump > 0.5:
        raise ValidationError("transition probability out of [0, 1]")
    A = tuple(g.A)
    J = int(np.prod(A))
    good = np.zeros(J, dtype=bool)
    good[np.asarray(g.D, dtype=int)] = True
    P = np.zeros((H, 3, J, 3))
    P[:, S_PLUS, :, S_PLUS] = 1.0
    P[:, S_MINUS, :, S_MINUS] = 1.0
    P[1:, S_INIT, :, S_INIT] = 1.0  # unreachable after step 1
    P[0, S_INIT, :, S_PLUS] = np.where(good, 0.5 + bump, 0.5)
    P[0, S_INIT, :, S_MINUS] = 1.0 - P[0, S_INIT, :, S_PLUS]
    R = np.zeros((H, 3, J, len(A)))
    R[1:, S_PLUS] = 1.0
    return MarkovGame(P, R, A, s1=S_INIT)


# -- JSON serialization ----------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def _dump_nested(arr, fmt):
    if arr.ndim == 1:
        return "[" + ",".join(fmt(x) for x in arr) + "]"
    return "[" + ",".join(_dump_nested(a, fmt) for a in arr) + "]"


def game_to_json(game, **extra):
    """Serialize to the JSON game schema; floats carry 17 significant digits."""
    if game.bernoulli.all():
        kind = '"bernoulli"'
    elif not game.bernoulli.any():
        kind = '"deterministic"'
    else:
        kind = _dump_nested(game.bernoulli.astype(int), str)
    parts = [
        f'"version":{SCHEMA_VERSION}',
        f'"m":{game.m}', f'"H":{game.H}', f'"S":{game.S}',
        f'"A":{json.dumps(list(game.A))}',
        f'"s1":{game.s1}',
        f'"P":{_dump_nested(game.P, _fmt)}',
        f'"R":{{"means":{_dump_nested(game.R, _fmt)},"kind":{kind}}}',
    ]
    parts += [f"{json.dumps(k)}:{json.dumps(v)}" for k, v in extra.items()]
    return "{" + ",".join(parts) + "}\n"


def game_from_dict(doc):
    try:
        A = tuple(doc["A"])
        kind = doc["R"]["kind"]
        if kind == "bernoulli":
            bern = True
        elif kind == "deterministic":
            bern = False
        else:
            bern = np.asarray(kind, dtype=bool)
        game = MarkovGame(doc["P"], doc["R"]["means"], A, bernoulli=bern, s1=doc["s1"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed game document: {exc}") from exc
    if (game.m, game.H, game.S) != (doc["m"], doc["H"], doc["S"]):
        raise ValidationError("game header disagrees with tensor shapes")
    return game


def game_from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON: {exc}") from exc
    return game_from_dict(doc)


def save_game(game, path, **extra):
    with open(path, "w") as f:
        f.write(game_to_json(game, **extra))


def load_game(path):
    """Load a game file; returns ``(game, document)`` so extra fields are available."""
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ValidationError(f"cannot read game file {path}: {exc}") from exc
    return game_from_json(text), json.loads(text)
