"""Exact equilibrium-gap auditors and gap reports."""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .validation import MAX_JOINT_ACTIONS, CapExceededError, ValidationError, check_distribution

#: Conditional masses below this are treated as unreachable.
MASS_FLOOR = 1e-15


def _swap_masses(means, dist, A, i):
    """``M[b, c] = sum_{a_-i} pi(b, a_-i) r_i(c, a_-i)`` for player ``i``."""
    A = tuple(int(a) for a in A)
    J = int(np.prod(A))
    if J > MAX_JOINT_ACTIONS:
        raise CapExceededError(f"{J} joint actions exceed {MAX_JOINT_ACTIONS}")
    means = np.asarray(means, dtype=float)
    dist = check_distribution(dist, J, "correlated distribution", atol=1e-9)
    if means.shape[0] != J:
        raise ValidationError(f"mean table has {means.shape[0]} rows, expected {J}")
    T = np.moveaxis(dist.reshape(A, order="F"), i, 0).reshape(A[i], -1)
    R = np.moveaxis(means[:, i].reshape(A, order="F"), i, 0).reshape(A[i], -1)
    return T, T @ R.T


def one_step_cce_gap(means, dist, A):
    """Per-player gain from the best fixed action against the others' marginal."""
    m = np.asarray(means).shape[1]
    gaps = np.empty(m)
    for i in range(m):
        _, M = _swap_masses(means, dist, A, i)
        gaps[i] = M.sum(axis=0).max() - np.trace(M)
    return gaps


def one_step_ce_gap(means, dist, A):
    """Per-player gain from the best action-swap map ``phi: A_i -> A_i``.

    Each recommended action is swapped independently to its best target
    against the conditional law of the others; unreachable recommendations
    contribute nothing.
    """
    m = np.asarray(means).shape[1]
    gaps = np.empty(m)
    for i in range(m):
        T, M = _swap_masses(means, dist, A, i)
        live = T.sum(axis=1) > MASS_FLOOR
        gain = M.max(axis=1) - np.diag(M)
        gaps[i] = gain[live].sum()
    return gaps


@dataclass
class PlayerGap:
    """One player's row of a :class:`GapReport`."""

    player: int
    exact_value: float
    best_response: float
    best_modification: float = None
    confidence_gap: float = None
    value_stderr: float = None
    deviation_stderr: float = None

    @property
    def gap(self):
        return self.best_response - self.exact_value

    @property
    def modification_gap(self):
        if self.best_modification is None:
            return None
        return self.best_modification - self.exact_value


@dataclass
class GapReport:
    """Per-player values and deviation values of one policy, with method tags."""

    players: list
    kind: str  # "nash", "cce" or "ce"
    method: str  # "exact-dp", "omniscient" or "monte-carlo"
    extras: dict = field(default_factory=dict)

    @property
    def gaps(self):
        return np.array([p.gap for p in self.players])

    @property
    def max_gap(self):
        return float(self.gaps.max())

    def to_dict(self):
        rows = []
        for p in self.players:
            d = asdict(p)
            d["gap"] = p.gap
            d["modification_gap"] = p.modification_gap
            rows.append(d)
        return {"kind": self.kind, "method": self.method, "max_gap": self.max_gap,
                "players": rows, **self.extras}

    def to_json(self, path=None):
        text = json.dumps(to_plain(self.to_dict()), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text

    def to_csv(self, path):
        """Rows ``(player, exact_value, omniscient_br, omniscient_mod, confidence_gap)``."""
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["player", "exact_value", "omniscient_br", "omniscient_mod", "confidence_gap"])
            for p in self.players:
                wr.writerow([p.player, _fmt(p.exact_value), _fmt(p.best_response),
                             _fmt(p.best_modification), _fmt(p.confidence_gap)])


def _fmt(x):
    return "" if x is None else format(float(x), ".17g")


def to_plain(x):
    """Recursively convert numpy containers and scalars to JSON-ready Python objects."""
    if isinstance(x, dict):
        return {str(k): to_plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def product_policy_report(game, policy):
    """Exact NE-gap report of a Markov product policy."""
    from .game import best_response_value, exact_value

    values = exact_value(game, policy)
    rows = [PlayerGap(i, float(values[i]), best_response_value(game, policy, i)[0])
            for i in range(game.m)]
    return GapReport(rows, "nash", "exact-dp")


def certified_report(game, history, kind="cce", mc_episodes=0, rng=None):
    """Gap report of the certified policy of ``history``.

    Values are exact; deviation values are the latent-index-observing
    bounds. With ``mc_episodes > 0`` Monte Carlo estimates of the value and
    of the omniscient deviator are added under ``extras["monte_carlo"]``.
    """
    from .certified import (
        certified_deviation_table,
        certified_exact_value,
        certified_rollouts,
        gap_bound_from_confidence,
    )
    from .rng import as_streams

    values = certified_exact_value(game, history)
    conf = gap_bound_from_confidence(history)
    rows = []
    tables = []
    for i in range(game.m):
        br_tab = certified_deviation_table(game, history, i, "best-response")
        mod_tab = certified_deviation_table(game, history, i, "best-modification")
        rows.append(PlayerGap(i, float(values[i]), float(br_tab.start_value(history, game.s1)[0]),
                              float(mod_tab.start_value(history, game.s1)[0]), float(conf[i])))
        tables.append(br_tab)
    report = GapReport(rows, kind, "omniscient")
    if mc_episodes:
        streams = as_streams(rng)
        base = certified_rollouts(game, history, mc_episodes, streams.get("eval", "value"))
        mc = {"episodes": int(mc_episodes), "value": base.mean(axis=0).tolist(),
              "value_stderr": (base.std(axis=0, ddof=1) / np.sqrt(mc_episodes)).tolist(),
              "deviation": [], "deviation_stderr": [], "gap": [], "gap_stderr": []}
        for i in range(game.m):
            dev = certified_rollouts(game, history, mc_episodes, streams.get("eval", "deviation", i),
                                     deviation=("omniscient", i, tables[i]))[:, i]
            mc["deviation"].append(float(dev.mean()))
            se = float(dev.std(ddof=1) / np.sqrt(mc_episodes))
            mc["deviation_stderr"].append(se)
            mc["gap"].append(float(dev.mean() - base[:, i].mean()))
            mc["gap_stderr"].append(float(np.hypot(se, mc["value_stderr"][i])))
        report.extras["monte_carlo"] = mc
    return report
