"""Knowledge distillation with a reward induced from teacher logits.

Tabular autoregressive teachers and students, the inverse-Bellman reward,
REINFORCE and baseline trainers, evaluation metrics, and brute-force oracles.
"""
from .errors import (
    CapacityError,
    ConfigurationError,
    CorpusIOError,
    EmptyInputError,
    EmptySequenceError,
    InvalidTokenError,
    LLMRError,
    NotTrainableError,
    NumericError,
)
from .kernels import BACKEND
from .policy import (
    GenerationState,
    ParamGrad,
    TabularPolicy,
    Vocab,
    beam_search,
    fit_mle,
    greedy_decode,
    load_policy,
    log_prob_gradient,
    next_token_distribution,
    sample_sequence,
    save_policy,
    sequence_log_prob,
    sgd_update,
)
from .reward import RewardedTrajectory, gains, induce_q_values, score_trajectory, step_reward

__version__ = "0.1.0"
