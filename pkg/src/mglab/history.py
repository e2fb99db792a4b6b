"""Episode archive produced by the V-learning players.

Each episode visits exactly one state per step, so the per-(h, s) visit lists
are stored implicitly: ``states[k, h]`` is the state seen at step ``h`` of
episode ``k`` and ``dists[i][k, h]`` is the action distribution player ``i``
had in force at that visit. Visit counts and visit-episode maps are derived
on demand. Episodes are 0-based in arrays; ``N_h^k(s)`` counts visits in
episodes ``0..k`` inclusive.
"""

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .validation import ValidationError

HISTORY_VERSION = 1


@dataclass
class RunHistory:
    """Everything a certified policy or a gap evaluator needs from a run.

    Attributes
    ----------
    states : (K, H+1) int
    actions : (K, H, m) int
    rewards : (K, H, m) float, realized rewards
    dists : list of (K, H, A_i) arrays, distributions in force at each visit
    upper, lower : (K+1, m) values at ``(h=0, s1)``; row ``k`` is taken at the
        start of episode ``k`` and row ``K`` after the last episode
    next_upper, next_lower : (K, H, m) the step-``h+1`` estimates at the
        observed next state, as read during the update at step ``h``
    final_upper, final_lower : (H+1, S, m) value tables after the run
    """

    A: tuple
    S: int
    s1: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dists: list
    upper: np.ndarray
    lower: np.ndarray
    next_upper: np.ndarray = None
    next_lower: np.ndarray = None
    final_upper: np.ndarray = None
    final_lower: np.ndarray = None
    params: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = tuple(int(a) for a in self.A)
        self.states = np.asarray(self.states, dtype=np.int64)
        self.dists = [np.asarray(d, dtype=float) for d in self.dists]
        if self.states.ndim != 2:
            raise ValidationError("states must have shape (K, H+1)")
        K, H = self.K, self.H
        if len(self.dists) != self.m:
            raise ValidationError("need one distribution array per player")
        for i, d in enumerate(self.dists):
            if d.shape != (K, H, self.A[i]):
                raise ValidationError(f"dists[{i}] has shape {d.shape}")
        self._orders = {}

    K = property(lambda self: self.states.shape[0])
    H = property(lambda self: self.states.shape[1] - 1)
    m = property(lambda self: len(self.A))

    # -- derived visit structure -------------------------------------------

    def counts(self, h):
        """``(K, S)`` array: visits to ``(h, s)`` in episodes ``0..k`` inclusive."""
        onehot = np.zeros((self.K, self.S), dtype=np.int64)
        onehot[np.arange(self.K), self.states[:, h]] = 1
        return np.cumsum(onehot, axis=0)

    def visit_count(self, h, s, k=None):
        """``N_h^k(s)``; ``k=None`` means after the last episode."""
        col = self.states[:, h] if k is None else self.states[: k + 1, h]
        return int(np.count_nonzero(col == s))

    def visits(self, h, s):
        """Episodes that visited ``(h, s)``, increasing: ``k_h^1(s) < k_h^2(s) < ...``."""
        return np.flatnonzero(self.states[:, h] == s)

    def visit_order(self, h):
        """``(order, start)``: episodes sorted by (state, episode) at step ``h``.

        The visits to ``(h, s)`` are ``order[start[s]:start[s+1]]``.
        """
        if h not in self._orders:
            col = self.states[:, h]
            order = np.argsort(col, kind="stable")
            start = np.concatenate([[0], np.cumsum(np.bincount(col, minlength=self.S))])
            self._orders[h] = (order, start)
        return self._orders[h]

    def final_dists(self):
        """Per player ``(H, S, A_i)``: the last distribution stored at each ``(h, s)``.

        Unvisited pairs are uniform.
        """
        out = []
        for i, d in enumerate(self.dists):
            f = np.full((self.H, self.S, self.A[i]), 1.0 / self.A[i])
            for h in range(self.H):
                f[h, self.states[:, h]] = d[:, h]  # later episodes overwrite
            out.append(f)
        return out

    def confidence_gap_curve(self):
        """Running ``(1/k) sum_{k'<=k} (upper - lower)`` at the initial state, shape ``(K, m)``."""
        diff = self.upper[: self.K] - self.lower[: self.K]
        return np.cumsum(diff, axis=0) / np.arange(1, self.K + 1)[:, None]

    def truncate(self, k):
        """The history of the first ``k`` episodes (final tables dropped)."""
        if not 1 <= k <= self.K:
            raise ValidationError(f"cannot truncate {self.K} episodes to {k}")
        cut = lambda x: None if x is None else x[:k]
        return RunHistory(
            self.A, self.S, self.s1, self.states[:k], self.actions[:k], self.rewards[:k],
            [d[:k] for d in self.dists], self.upper[: k + 1], self.lower[: k + 1],
            cut(self.next_upper), cut(self.next_lower), None, None,
            dict(self.params), {})

    def check(self):
        """Structural invariants; raises ValidationError on the first violation."""
        if np.any(self.states[:, 0] != self.s1):
            raise ValidationError("every episode must start at s1")
        if np.any((self.states < 0) | (self.states >= self.S)):
            raise ValidationError("state index out of range")
        for h in range(self.H):
            if np.bincount(self.states[:, h], minlength=self.S).sum() != self.K:
                raise ValidationError("visits at a step must sum to K")
        for d in self.dists:
            if not np.allclose(d.sum(axis=-1), 1.0, rtol=0, atol=1e-12):
                raise ValidationError("stored distribution does not sum to 1")
        return True

    # -- persistence --------------------------------------------------------

    _ARRAYS = ("states", "actions", "rewards", "upper", "lower", "next_upper",
               "next_lower", "final_upper", "final_lower")

    def to_bytes(self, game=None):
        """``.npz`` container with a version tag (and the game, if given).

        Zip entries carry a fixed timestamp so equal histories give equal bytes.
        """
        arrays = {k: getattr(self, k) for k in self._ARRAYS if getattr(self, k) is not None}
        for i, d in enumerate(self.dists):
            arrays[f"dist_{i}"] = d
        meta = {"version": HISTORY_VERSION, "A": list(self.A), "S": self.S, "s1": self.s1,
                "params": self.params, "diagnostics": _jsonable(self.diagnostics)}
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        if game is not None:
            from .game import game_to_json
            arrays["game"] = np.frombuffer(game_to_json(game).encode(), dtype=np.uint8)
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            for name, arr in arrays.items():
                entry = io.BytesIO()
                np.lib.format.write_array(entry, np.ascontiguousarray(arr), allow_pickle=False)
                info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                zf.writestr(info, entry.getvalue())
        return buf.getvalue()

    def save(self, path, game=None):
        """Write :meth:`to_bytes` to ``path``."""
        with open(path, "wb") as f:
            f.write(self.to_bytes(game))

    @classmethod
    def load(cls, path):
        """Inverse of :meth:`save` (a path, file object or bytes); returns ``(history, game_or_None)``."""
        if isinstance(path, (bytes, bytearray)):
            path = io.BytesIO(path)
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(z["meta"].tobytes().decode())
            if meta.get("version") != HISTORY_VERSION:
                raise ValidationError(f"unsupported history version {meta.get('version')}")
            arrays = {k: z[k] for k in cls._ARRAYS if k in z}
            dists = [z[f"dist_{i}"] for i in range(len(meta["A"]))]
            game = None
            if "game" in z:
                from .game import game_from_json
                game = game_from_json(z["game"].tobytes().decode())
        hist = cls(tuple(meta["A"]), meta["S"], meta["s1"], dists=dists,
                   params=meta["params"], diagnostics=meta["diagnostics"], **arrays)
        return hist, game


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out
