"""On-policy training loop: collect through the filter, fit the critic, CVaR-GAE, PPO, EMA."""

import json
from dataclasses import dataclass

import numpy as np

from ..tailrisk import CoverageState, pid_update, sample_quantiles, var_es_empirical
from .critic import CriticParams, Transitions, critic_targets, cvar_value, quantile_huber_update
from .policy import PolicyParams, ema_update
from .ppo import Rollout, TrainState, cvar_gae, ppo_update
from .schedule import entropy_schedule, kl_coef_schedule


@dataclass
class TrainConfig:
    iterations: int = 40
    episodes_per_iter: int = 16
    K: int = 64  # quantile draws per batch
    critic_steps: int = 20
    critic_minibatch: int = 128
    kappa_huber: float = 1.0
    n_action_samples: int = 4
    penalty_weight: float = None  # default: 10 x typical step cost
    typical_step_cost: float = 0.1
    lambda_ent0: float = 1e-3
    lambda_kl0: float = 0.05
    lambda_kl1: float = 0.5
    hidden: tuple = (64, 64)
    log_std_init: float = -0.5
    log_std_min: float = -4.0
    log_std_max: float = 1.0
    seed: int = 0


def init_state(d, m, cfg=None, **overrides):
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    theta = PolicyParams.init(d, m, cfg.hidden, rng, cfg.log_std_min, cfg.log_std_max, cfg.log_std_init)
    psi = CriticParams.init(d, m, hidden=cfg.hidden[:1], width=cfg.hidden[0], rng=rng)
    kw = dict(total_steps=cfg.iterations, lambda_kl=cfg.lambda_kl0, lambda_ent=cfg.lambda_ent0)
    kw.update(overrides)
    ctrl = CoverageState.for_alpha(kw.get("alpha_start", 0.10))
    return TrainState(theta=theta, psi=psi, ref=theta.copy(), ctrl=ctrl, **kw)


def _stack(trajs, attr):
    return np.concatenate([getattr(t, attr) for t in trajs])


def train_iteration(state, envs, cfg, filt=None, rng=None, run_episode=None):
    """One pass of the training loop over a list of environments (one episode each)."""
    if run_episode is None:
        from ..evaluation.episode import run_episode
    rng = np.random.default_rng(rng)
    alpha = state.alpha
    pw = cfg.penalty_weight if cfg.penalty_weight is not None else 10.0 * cfg.typical_step_cost
    last_kl = state.kl_history[-1] if state.kl_history else None
    ctx = {"kl_step": last_kl, "tail_coverage": state.ctrl.history[-1][3] if state.ctrl.history else None, "alpha": alpha}
    results = [
        run_episode(env, state.theta, filt, penalty_weight=pw, collect=True, policy_seed=int(rng.integers(2**31)),
                    episode_id=i, context=ctx, run_id=f"train-{state.step}")
        for i, env in enumerate(envs)
    ]
    trajs = [r.trajectory for r in results]

    # coverage control on this iteration's quantile batch
    batch = sample_quantiles(state.ctrl, alpha, cfg.K, rng)
    state.ctrl = pid_update(state.ctrl, batch.alpha_eff_hat)

    # critic: bootstrap with the next nominal action of the same rollout
    X = _stack(trajs, "X")
    U = _stack(trajs, "U_nom")
    losses = _stack(trajs, "losses")
    X_next = np.concatenate([np.vstack([t.X[1:], t.X[-1:]]) for t in trajs])
    U_next = np.concatenate([np.vstack([t.U_nom[1:], t.U_nom[-1:]]) for t in trajs])
    done = np.concatenate([np.r_[np.zeros(len(t.X) - 1), 1.0] for t in trajs])
    target_net = state.psi.copy()
    taus_next = sample_quantiles(state.ctrl, alpha, cfg.K, rng).taus
    Y = critic_targets(target_net, losses, X_next, U_next, done, state.gamma, taus_next)
    closs = 0.0
    for _ in range(cfg.critic_steps):
        _, closs = quantile_huber_update(state.psi, Transitions(X, U, Y), batch.taus, cfg.kappa_huber, cfg.critic_minibatch, rng)

    # CVaR baseline and advantages per episode
    adv = []
    for t in trajs:
        V = cvar_value(state.psi, t.X, state.theta, alpha, batch, cfg.n_action_samples, rng)
        adv.append(cvar_gae(t.losses, np.r_[V, 0.0], state.gamma, state.lambda_gae))
    rollout = Rollout(X, U, _stack(trajs, "logp"), np.concatenate(adv))
    state, stats = ppo_update(state, rollout, rng)
    state.ref = ema_update(state.ref, state.theta, state.ema_rate)

    state.step += 1
    state.lambda_ent = entropy_schedule(state.step, state.total_steps, cfg.lambda_ent0, 0.0)
    state.lambda_kl = kl_coef_schedule(state.alpha, state.alpha_start, state.alpha_target, cfg.lambda_kl0, cfg.lambda_kl1)
    ep_losses = np.array([r.loss_T for r in results])
    es = var_es_empirical(ep_losses, 0.9)[1] if ep_losses.size >= 10 else float(ep_losses.max())
    log = {
        "iter": state.step,
        "alpha": alpha,
        "kl_step": stats["kl_step"],
        "entropy": stats["entropy"],
        "clip_frac": stats["clip_frac"],
        "w_hat": batch.alpha_eff_hat,
        "T": state.ctrl.T,
        "gamma_tail": state.ctrl.gamma_tail,
        "critic_loss": closs,
        "mean_loss": float(ep_losses.mean()),
        "es_loss": float(es),
        "mean_unom_norm": float(np.mean([r.mean_unom_norm for r in results])),
        "slack_events": int(sum(r.slack_events for r in results)),
    }
    return state, log


def train(state, env_factory, cfg=None, filt=None, log_path=None, on_iteration=None):
    """Run ``cfg.iterations - state.step`` iterations; env_factory(iteration, episode) builds environments."""
    cfg = cfg or TrainConfig()
    logs = []
    fh = open(log_path, "a") if log_path else None
    try:
        while state.step < cfg.iterations:
            envs = [env_factory(state.step, i) for i in range(cfg.episodes_per_iter)]
            state, log = train_iteration(state, envs, cfg, filt, rng=[cfg.seed, state.step])
            logs.append(log)
            if fh:
                fh.write(json.dumps(log) + "\n")
                fh.flush()
            if on_iteration:
                on_iteration(state, log)
    finally:
        if fh:
            fh.close()
    return state, logs
