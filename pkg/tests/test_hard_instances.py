import itertools
import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mglab.game import exact_value, MarkovProductPolicy
from mglab.hard_instances import (
    OneStepHardGame,
    bernoulli_kl,
    block_one_net,
    build_hard_game,
    hamming_code,
    hamming_one_net,
    hard_game,
    hard_game_to_json,
    is_one_net,
    joint_indices,
    kl_decomposition_check,
    kl_half_eps,
    parity_check_matrix,
    permute_game,
    random_history_rule,
    switch_after_zero_rule,
    verify_pure_ne_set,
)
from mglab.validation import CapExceededError, ValidationError


# -- covering codes ------------------------------------------------------------

@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_hamming_code_is_perfect(k):
    code = hamming_code(k)
    n = 2**k - 1
    assert code.shape == (2 ** (n - k), n)
    assert not np.any((parity_check_matrix(k) @ code.T) % 2)
    assert is_one_net(code, (2,) * n)
    # perfect: the radius-1 balls are disjoint and exactly tile the space
    assert len(code) * (n + 1) == 2**n


def test_small_nets():
    assert hamming_one_net(3).tolist() == [[0, 0, 0], [1, 1, 1]]
    assert len(hamming_one_net(4)) <= 4


@pytest.mark.parametrize("m", range(1, 13))
def test_hamming_net_size_and_cover(m):
    net = hamming_one_net(m)
    assert len(net) <= 2 ** (m + 1) / m
    assert is_one_net(net, (2,) * m)


@pytest.mark.parametrize("m,k", [(2, 2), (3, 2), (2, 3), (3, 3), (4, 2), (5, 2)])
def test_block_net_size_and_cover(m, k):
    net = block_one_net(m, k)
    assert net.max() < 2 * k
    assert len(net) <= 2 * (2 * k) ** m / (k * m)
    assert is_one_net(net, (2 * k,) * m)


def test_block_net_block_count():
    assert len(block_one_net(2, 2)) <= 8
    net = block_one_net(3, 2)
    assert len({tuple(r) for r in net // 2}) == 4
    np.testing.assert_array_equal(block_one_net(5, 1), hamming_one_net(5))


def test_not_a_net():
    assert not is_one_net([[0, 0, 0]], (2, 2, 2))
    with pytest.raises(CapExceededError):
        block_one_net(11, 2)


# -- hard games ----------------------------------------------------------------

def test_hard_game_means():
    g = hard_game(4, 1, 0.1)
    means = g.means
    assert means.shape == (16, 4)
    assert set(np.unique(means).round(12)) == {0.5, 0.6}
    np.testing.assert_array_equal(np.flatnonzero(means[:, 0] > 0.5), g.D)
    flat = hard_game(4, 1, 0.0)
    assert np.all(flat.means == 0.5)


@pytest.mark.filterwarnings("ignore:fewer than 4 players")
def test_ne_set_equals_good_set():
    for m, k in [(4, 1), (5, 1), (3, 2), (4, 2)]:
        g = hard_game(m, k, 0.1)
        np.testing.assert_array_equal(verify_pure_ne_set(g), g.D)


def test_ne_set_special_cases():
    A = (2, 3)
    assert len(verify_pure_ne_set(np.full((6, 2), 0.3), A)) == 6
    anti = np.array([[0, 0], [1, 1], [1, 1], [0, 0]], dtype=float)
    ne = verify_pure_ne_set(anti, (2, 2))
    assert [tuple(np.unravel_index(j, (2, 2), order="F")) for j in ne] == [(1, 0), (0, 1)]


def test_permutations():
    g = hard_game(4, 1, 0.2)
    ident = [list(range(2))] * 4
    assert permute_game(g, ident) == g
    rng = np.random.default_rng(0)
    perms = [rng.permutation(2) for _ in range(4)]
    inv = [np.argsort(p) for p in perms]
    h = g.permute(perms)
    assert permute_game(h, inv) == g
    np.testing.assert_array_equal(verify_pure_ne_set(h), h.D)
    with pytest.raises(ValidationError):
        permute_game(g, [[0, 0]] * 4)


def test_build_from_rows_and_warning():
    with pytest.warns(UserWarning):
        g = build_hard_game([[0, 0, 0], [1, 1, 1]], 0.1)
    assert g.D == (0, 7)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_hard_game(hamming_one_net(4), 0.1)
    with pytest.raises(ValidationError):
        build_hard_game([0, 3], 0.1)
    with pytest.raises(ValidationError):
        OneStepHardGame((2, 2), (0,), 0.45)


def test_markov_forms():
    g = hard_game(4, 1, 0.2)
    mg = g.to_markov_game()
    assert mg.H == 1 and mg.S == 1 and mg.bernoulli.all()
    e = g.embed(3)
    assert e.S == 3
    good = MarkovProductPolicy.constant(e, tuple(np.unravel_index(g.D[0], g.A, order="F")))
    bad_j = int(np.flatnonzero(~g.good)[0])
    bad = MarkovProductPolicy.constant(e, tuple(np.unravel_index(bad_j, g.A, order="F")))
    # reach the rewarding state w.p. 1/2 + eps/(2(H-1)), then earn H-1
    assert exact_value(e, good)[0] == pytest.approx((0.5 + 0.2 / 4) * 2)
    assert exact_value(e, bad)[0] == pytest.approx(0.5 * 2)


def test_json_has_good_set():
    g = hard_game(4, 1, 0.1)
    doc = json.loads(hard_game_to_json(g))
    assert doc["D"] == list(g.D) and doc["epsilon"] == 0.1
    doc3 = json.loads(hard_game_to_json(g, H=3))
    assert doc3["S"] == 3 and doc3["D"] == list(g.D)


# -- KL --------------------------------------------------------------------------

def test_bernoulli_kl_values():
    assert bernoulli_kl(0.5, 0.1) == pytest.approx(0.51083, abs=1e-5)
    assert bernoulli_kl(0.6, 0.5) == pytest.approx(0.020136, abs=1e-6)
    assert bernoulli_kl(0.5, 0.6) == pytest.approx(kl_half_eps(0.1), rel=1e-12)
    with pytest.raises(ValidationError):
        bernoulli_kl(0.0, 0.5)


@given(st.floats(0.0, 0.4))
def test_kl_half_eps_bound(eps):
    assert 0 <= kl_half_eps(eps) <= 4 * eps**2 + 1e-15


def test_kl_equal_means():
    lhs, rhs = kl_decomposition_check([0.3, 0.6], [0.3, 0.6], switch_after_zero_rule, 4)
    assert lhs == pytest.approx(0.0, abs=1e-15) and rhs == 0.0


def test_kl_single_pull():
    lhs, rhs = kl_decomposition_check([0.4, 0.2], [0.5, 0.9], switch_after_zero_rule, 1)
    assert lhs == pytest.approx(bernoulli_kl(0.4, 0.5), rel=1e-12)
    assert rhs == pytest.approx(lhs, rel=1e-12)


def test_kl_switch_rule_frozen():
    # action 1 is pulled once in expectation over three steps
    lhs, rhs = kl_decomposition_check([0.5, 0.5], [0.5, 0.7], switch_after_zero_rule, 3)
    expected = 0.5 * math.log(25 / 21)
    assert lhs == pytest.approx(expected, abs=1e-12)
    assert rhs == pytest.approx(expected, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 4), st.integers(1, 8))
def test_kl_decomposition_random_rules(seed, n_actions, n):
    rng = np.random.default_rng(seed)
    P = rng.uniform(0.05, 0.95, n_actions)
    Q = rng.uniform(0.05, 0.95, n_actions)
    lhs, rhs = kl_decomposition_check(P, Q, random_history_rule(n_actions, rng), n)
    assert abs(lhs - rhs) <= 1e-10


def test_kl_with_seeded_rule():
    def rule(hist, seed):
        return (seed + len(hist)) % 2

    lhs, rhs = kl_decomposition_check([0.3, 0.8], [0.6, 0.4], rule, 3, seeds=range(3))
    assert abs(lhs - rhs) <= 1e-12
    with pytest.raises(CapExceededError):
        kl_decomposition_check([0.5], [0.5], lambda h: 0, 21)


def test_joint_indices_little_endian():
    rows = list(itertools.product(range(2), range(3)))
    idx = joint_indices(rows, (2, 3))
    assert [int(i) for i in idx] == [a + 2 * b for a, b in rows]
