"""Input validation helpers and the package's exception types."""

import numpy as np

#: Largest joint-action space any dense tensor may index.
MAX_JOINT_ACTIONS = 2**20
#: Largest number of (step, state) pairs.
MAX_STATE_STEPS = 10**5
#: Tolerance for probability vectors summing to one.
SIMPLEX_ATOL = 1e-12


class ValidationError(ValueError):
    """Malformed input: wrong shapes, out-of-range values, bad config."""


class CapExceededError(ValidationError):
    """A desk-scale size cap was exceeded."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to meet its accuracy contract."""


def check_action_counts(A):
    A = tuple(int(a) for a in np.atleast_1d(A))
    if len(A) == 0:
        raise ValidationError("need at least one player")
    if any(a < 1 for a in A):
        raise ValidationError(f"action counts must be positive, got {A}")
    n_joint = int(np.prod(A, dtype=object))
    if n_joint > MAX_JOINT_ACTIONS:
        raise CapExceededError(
            f"joint action space {n_joint} exceeds cap {MAX_JOINT_ACTIONS}")
    return A


def check_distribution(p, size=None, name="distribution", atol=SIMPLEX_ATOL):
    """Validate a probability vector (or a stack of them along the last axis)."""
    p = np.asarray(p, dtype=float)
    if size is not None and p.shape[-1] != size:
        raise ValidationError(f"{name} has {p.shape[-1]} entries, expected {size}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValidationError(f"{name} must be finite and nonnegative")
    if not np.allclose(p.sum(axis=-1), 1.0, rtol=0, atol=atol):
        raise ValidationError(f"{name} must sum to 1 (atol={atol})")
    return p


def check_unit_interval(x, name):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(x < 0) or np.any(x > 1):
        raise ValidationError(f"{name} must lie in [0, 1]")
    return x


def check_player(i, m):
    i = int(i)
    if not 0 <= i < m:
        raise ValidationError(f"player index {i} out of range for {m} players")
    return i


def check_positive_int(x, name, minimum=1):
    if int(x) != x or x < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {x}")
    return int(x)


def check_policy(policy, game):
    """Check that a product policy matches the game's dimensions."""
    if policy.m != game.m:
        raise ValidationError(f"policy has {policy.m} players, game has {game.m}")
    for i, d in enumerate(policy.dists):
        expected = (game.H, game.S, game.A[i])
        if d.shape != expected:
            raise ValidationError(
                f"policy for player {i} has shape {d.shape}, expected {expected}")
    return policy
