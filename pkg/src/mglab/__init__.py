"""Decentralized equilibrium learning and auditing for tabular Markov games."""

from .bandit import FtrlExpertState, MixedExpertState, swap_regret
from .certified import (
    CertifiedPolicySampler,
    certified_deviation_value,
    certified_exact_value,
    certified_omniscient_deviation,
    certified_rollouts,
    gap_bound_from_confidence,
)
from .evaluators import (
    GapReport,
    certified_report,
    one_step_ce_gap,
    one_step_cce_gap,
    product_policy_report,
)
from .experiment import ExperimentConfig
from .game import (
    MarkovGame,
    MarkovProductPolicy,
    best_response_value,
    embed_one_step_game,
    exact_value,
    load_game,
    ne_gap,
    save_game,
)
from .hard_instances import (
    OneStepHardGame,
    block_one_net,
    hamming_one_net,
    hard_game,
    is_one_net,
    kl_decomposition_check,
    verify_pure_ne_set,
)
from .history import RunHistory
from .learners import CCEVLearning, CEVLearning, ce_v_learning, cce_v_learning
from .mpg import NashCA, NashCaConfig, UCBVIUpLow, mdp_view, monte_carlo_value, nash_ca, ucbvi_uplow
from .rng import RngStreams
from .schedules import ScheduleParams, alpha, alpha_weights
from .validation import CapExceededError, NumericalError, ValidationError

__version__ = "0.1.0"
