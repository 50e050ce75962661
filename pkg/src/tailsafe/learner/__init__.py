from .critic import CriticParams, Transitions, critic_targets, cvar_value, quantile_huber_loss, quantile_huber_update
from .nets import Adam, Mlp
from .policy import PolicyParams, ema_update, entropy, gaussian_kl, log_prob, policy_sample
from .ppo import Rollout, TrainState, actor_objective, cvar_gae, ppo_update
from .schedule import alpha_schedule, entropy_schedule, kl_coef_schedule
from .trainer import TrainConfig, init_state, train, train_iteration

__all__ = [
    "Adam",
    "CriticParams",
    "Mlp",
    "PolicyParams",
    "Rollout",
    "TrainConfig",
    "TrainState",
    "Transitions",
    "actor_objective",
    "alpha_schedule",
    "critic_targets",
    "cvar_gae",
    "cvar_value",
    "ema_update",
    "entropy",
    "entropy_schedule",
    "gaussian_kl",
    "init_state",
    "kl_coef_schedule",
    "log_prob",
    "policy_sample",
    "ppo_update",
    "quantile_huber_loss",
    "quantile_huber_update",
    "train",
    "train_iteration",
]
