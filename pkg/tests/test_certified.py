import numpy as np
import pytest

from conftest import one_step_game
from mglab.certified import (
    CertifiedPolicySampler,
    certified_deviation_table,
    certified_deviation_value,
    certified_exact_value,
    certified_omniscient_deviation,
    certified_rollouts,
    certified_value_table,
    gap_bound_from_confidence,
)
from mglab.game import (
    MarkovGame,
    MarkovProductPolicy,
    best_response_value,
    exact_value,
    product_distribution,
    sample_episode,
)
from mglab.history import RunHistory
from mglab.learners import cce_v_learning, ce_v_learning
from mglab.rng import RngStreams
from mglab.schedules import ScheduleParams, alpha_weights
from mglab.validation import ValidationError


def learned(game, K, seed=0, algorithm="cce"):
    params = ScheduleParams.for_game(game, K)
    learn = cce_v_learning if algorithm == "cce" else ce_v_learning
    return learn(game, params, RngStreams(seed))


def pure_history(game, policy, seed=0):
    """K=1 history whose stored distributions are those of ``policy`` along one episode."""
    rng = np.random.default_rng(seed)
    tr = sample_episode(game, lambda h, s: tuple(int(d[h, s].argmax()) for d in policy.dists), rng)
    dists = [d[np.arange(game.H), tr.states[:-1]][None] for d in policy.dists]
    upper = np.array([[game.H] * game.m, [game.H] * game.m], dtype=float)
    return RunHistory(game.A, game.S, game.s1, tr.states[None], tr.actions[None],
                      tr.rewards[None], dists, upper, np.zeros_like(upper))


# -- sampler -------------------------------------------------------------------------

def test_k1_sampler_replays_stored_distribution():
    g = MarkovGame.random(2, 2, 2, 2, rng=0)
    pol = MarkovProductPolicy.constant(g, (1, 0))
    hist = pure_history(g, pol)
    sampler = CertifiedPolicySampler(hist, np.random.default_rng(0))
    for _ in range(20):
        sampler.reset()
        assert sampler.k == 0
        assert sampler.sample_visit(1) == 1
        assert sampler.act(hist.states[0, 0]) == (1, 0)


def test_unvisited_state_plays_uniformly():
    g = MarkovGame.random(2, 3, 2, (2, 3), rng=1)
    hist = pure_history(g, MarkovProductPolicy.constant(g, 0))
    unseen = [s for s in range(3) if s != hist.states[0, 1]][0]
    sampler = CertifiedPolicySampler(hist, np.random.default_rng(1))
    seen = set()
    for _ in range(300):
        sampler.reset()
        sampler.act(g.s1)
        seen.add(sampler.act(unseen))
        assert sampler.uniform
    assert len(seen) == 6


def test_sampler_seeded():
    g = MarkovGame.random(2, 2, 2, 2, rng=2)
    hist = learned(g, 60)

    def draws(seed):
        smp = CertifiedPolicySampler(hist, np.random.default_rng(seed))
        return [sample_episode(g, smp.actor(), np.random.default_rng(seed)).actions.tolist()
                for _ in range(30)]

    assert draws(4) == draws(4)
    with pytest.raises(ValidationError):
        smp = CertifiedPolicySampler(hist, 0).reset()
        for _ in range(3):
            smp.act(0)


def test_visit_index_law():
    hist = learned(MarkovGame.random(1, 1, 3, 2, rng=0), 10)
    smp = CertifiedPolicySampler(hist, np.random.default_rng(0))
    t, n = 7, 200_000
    freq = np.bincount([smp.sample_visit(t) for _ in range(n)], minlength=t + 1) / n
    np.testing.assert_allclose(freq, alpha_weights(t, 3), atol=4e-3)


# -- exact value ---------------------------------------------------------------------

def test_one_step_value_unrolled():
    g = one_step_game(np.random.default_rng(3).random((4, 2)), (2, 2))
    hist = learned(g, 40, seed=5)
    # oracle: (1/K) sum_k sum_l alpha_t^l E_{mu^{k_l}}[r]
    r = g.R[0, 0]
    want = np.zeros(2)
    for k in range(hist.K):
        t = k + 1
        w = alpha_weights(t, 1)
        for l in range(1, t + 1):
            joint = product_distribution([d[l - 1, 0] for d in hist.dists])
            want += w[l] * joint @ r
    np.testing.assert_allclose(certified_exact_value(g, hist), want / hist.K, rtol=1e-12)


def test_exact_value_matches_monte_carlo():
    g = MarkovGame.random(2, 2, 2, 2, rng=6, bernoulli=True)
    hist = learned(g, 50, seed=6)
    exact = certified_exact_value(g, hist)
    ret = certified_rollouts(g, hist, 10**6, np.random.default_rng(7))
    se = ret.std(axis=0, ddof=1) / 1e3
    assert np.all(np.abs(ret.mean(axis=0) - exact) <= 3 * se)
    # the step-by-step sampler agrees with the batched one
    smp = CertifiedPolicySampler(hist, np.random.default_rng(8))
    rng = np.random.default_rng(9)
    ret2 = np.array([sample_episode(g, smp.actor(), rng).returns for _ in range(20000)])
    se2 = ret2.std(axis=0, ddof=1) / np.sqrt(len(ret2))
    assert np.all(np.abs(ret2.mean(axis=0) - exact) <= 4 * se2)


def test_decomposition_is_structural(small_game):
    hist = learned(small_game, 30)
    table = certified_value_table(small_game, hist)
    per_k = [table.value(hist, 0, k, small_game.s1) for k in range(hist.K)]
    np.testing.assert_array_equal(certified_exact_value(small_game, hist, table),
                                  table.start_value(hist, small_game.s1))
    np.testing.assert_allclose(np.mean(per_k, axis=0), certified_exact_value(small_game, hist),
                               rtol=1e-13)


def test_pure_k1_history_matches_product_policy():
    g = MarkovGame.random(3, 3, 3, 2, rng=7)
    acts = [np.random.default_rng(i).integers(2, size=(3, 3)) for i in range(3)]
    pol = MarkovProductPolicy.from_actions(acts, g.A)
    # off-path states play uniformly, so transitions must be deterministic
    P = np.zeros_like(g.P)
    P[..., 0] = 1.0
    det = MarkovGame(P, g.R, g.A)
    hist = pure_history(det, pol, seed=1)
    np.testing.assert_allclose(certified_exact_value(det, hist), exact_value(det, pol), rtol=1e-13)
    for i in range(3):
        br = certified_omniscient_deviation(det, hist, i, "best-response")
        assert br == pytest.approx(best_response_value(det, pol, i)[0], rel=1e-13)


# -- deviations ----------------------------------------------------------------------

@pytest.mark.parametrize("algorithm", ["cce", "ce"])
def test_deviation_ordering(algorithm):
    for seed in range(3):
        g = MarkovGame.random(2, 2, 3, (2, 3), rng=30 + seed)
        hist = learned(g, 80, seed, algorithm)
        value = certified_exact_value(g, hist)
        for i in range(g.m):
            br = certified_omniscient_deviation(g, hist, i, "best-response")
            mod = certified_omniscient_deviation(g, hist, i, "best-modification")
            assert mod >= value[i] - 1e-12
            assert br >= mod - 1e-12


def test_omniscient_dominates_markov_deviations():
    g = MarkovGame.random(2, 2, 2, 2, rng=10)
    hist = learned(g, 60, seed=3)
    rng = np.random.default_rng(11)
    for i in range(2):
        br = certified_omniscient_deviation(g, hist, i)
        for _ in range(50):
            sigma = rng.dirichlet(np.ones(2), size=(2, 2))
            assert certified_deviation_value(g, hist, i, sigma) <= br + 1e-12


def test_markov_deviation_exact_matches_rollouts():
    g = MarkovGame.random(2, 2, 2, 2, rng=12)
    hist = learned(g, 40, seed=2)
    sigma = np.random.default_rng(0).dirichlet(np.ones(2), size=(2, 2))
    exact = certified_deviation_value(g, hist, 1, sigma)
    ret = certified_rollouts(g, hist, 400_000, np.random.default_rng(1), ("markov", 1, sigma))[:, 1]
    assert abs(ret.mean() - exact) <= 3 * ret.std(ddof=1) / np.sqrt(len(ret))
    tab = certified_deviation_table(g, hist, 0)
    ret = certified_rollouts(g, hist, 400_000, np.random.default_rng(2), ("omniscient", 0, tab))[:, 0]
    omni = certified_omniscient_deviation(g, hist, 0)
    assert abs(ret.mean() - omni) <= 3 * ret.std(ddof=1) / np.sqrt(len(ret))


def test_confidence_bounds_bracket_latent_values():
    # upper snapshots dominate the latent-observing deviation, lower ones
    # sit below the certified value, on at least 95% of episodes
    hits, total = 0, 0
    for seed in range(10):
        g = MarkovGame.random(2, 2, 2, 2, rng=50 + seed)
        hist = learned(g, 150, seed)
        vals = certified_value_table(g, hist)
        for i in range(2):
            dev = certified_deviation_table(g, hist, i)
            for k in range(1, hist.K + 1):
                ok = (hist.upper[k, i] >= dev.lookup(0, g.s1, k)[0] - 1e-9
                      and hist.lower[k, i] <= vals.lookup(0, g.s1, k)[i] + 1e-9)
                hits += ok
                total += 1
    assert hits >= 0.95 * total


def test_gap_bound():
    g = MarkovGame.random(2, 2, 2, 2, rng=3)
    hist = learned(g, 200)
    np.testing.assert_array_equal(gap_bound_from_confidence(hist.truncate(1)), [2.0, 2.0])
    assert np.all(gap_bound_from_confidence(hist) >= 0)
    for i in range(2):
        assert certified_omniscient_deviation(g, hist, i) - certified_exact_value(g, hist)[i] >= -1e-12


def test_dimension_mismatch_rejected(small_game):
    hist = learned(small_game, 5)
    other = MarkovGame.random(2, 3, 2, 2, rng=0)
    with pytest.raises(ValidationError):
        certified_exact_value(other, hist)
    with pytest.raises(ValidationError):
        certified_deviation_value(small_game, hist, 0, np.ones((2, 2, 3)) / 3)
