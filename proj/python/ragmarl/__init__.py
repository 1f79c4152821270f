"""Python access to the ragmarl core: answer metrics, rewards, advantages and worlds."""

from ragmarl._core import (
    AnswerMetrics,
    Bm25Index,
    ConfigError,
    Error,
    RewardBreakdown,
    World,
    actor_objective,
    answer_metrics,
    assemble_terminal_reward,
    beta_schedule,
    build_world,
    compute_gae,
    critic_loss,
    discounted_returns,
    load_world,
    normalize_answer,
    parse_world,
    penalty_g,
    penalty_qr,
    total_loss,
)

__all__ = [
    "AnswerMetrics",
    "Bm25Index",
    "ConfigError",
    "Error",
    "RewardBreakdown",
    "World",
    "actor_objective",
    "answer_metrics",
    "assemble_terminal_reward",
    "beta_schedule",
    "build_world",
    "compute_gae",
    "critic_loss",
    "discounted_returns",
    "load_world",
    "normalize_answer",
    "parse_world",
    "penalty_g",
    "penalty_qr",
    "total_loss",
]
