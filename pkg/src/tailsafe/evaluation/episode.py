"""Run one episode through policy -> safety filter -> execution and summarize it."""

from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import clone

from ..exceptions import ConfigError
from ..governance import TriggerConfig, eval_triggers
from ..learner.policy import PolicyParams, policy_sample
from ..safety import CbfQpFilter
from .env import HedgeConfig, HedgingEnv, Scenario


@dataclass
class Trajectory:
    X: np.ndarray
    U_nom: np.ndarray
    U_safe: np.ndarray
    logp: np.ndarray
    losses: np.ndarray  # step loss plus the safety penalty
    penalties: np.ndarray


@dataclass
class StepAudit:
    """Raw filter inputs and output kept for independent re-checking."""

    state: object
    barriers: list
    params: object  # after guard shrinkage
    u_prev: np.ndarray
    u_safe: np.ndarray
    record: object


@dataclass
class EpisodeResult:
    pnl_T: float
    loss_T: float
    cost_total: float
    n_steps: int
    slack_events: int
    tightest_hist: dict
    gate_pass_rate: float
    rate_util_q: dict
    solver_ms_q: dict
    intercepts: int
    mean_unom_norm: float
    seed: int
    cell: str
    index: int
    step_losses: np.ndarray = field(repr=False, default=None)
    trajectory: Trajectory = field(repr=False, default=None)
    audit: list = field(repr=False, default=None)
    records: list = field(repr=False, default=None)
    triggers: list = field(repr=False, default=None)


def _quantiles(values):
    v = np.asarray(values, float)
    if v.size == 0:
        return {"p50": 0.0, "p95": 0.0, "max": 0.0}
    return {"p50": float(np.percentile(v, 50)), "p95": float(np.percentile(v, 95)), "max": float(v.max())}


def _policy_action(policy, x, rng, deterministic):
    if isinstance(policy, PolicyParams):
        if deterministic:
            mu, _, _ = policy.forward(x)
            return mu[0], 0.0
        return policy_sample(policy, x, rng)
    out = policy(x, rng)
    return (np.asarray(out[0], float), float(out[1])) if isinstance(out, tuple) else (np.asarray(out, float), 0.0)


def make_env(scenario, horizon=None, dt=None, config=None):
    if not isinstance(scenario, Scenario):
        return scenario  # already an environment
    cfg = config or HedgeConfig()
    if horizon is not None:
        cfg = replace(cfg, n_steps=int(horizon))
    if dt is not None:
        cfg = replace(cfg, dt=float(dt))
    return HedgingEnv(scenario, cfg)


def run_episode(
    scenario,
    policy,
    filt=None,
    horizon=None,
    dt=None,
    config=None,
    store=None,
    run_id="eval",
    episode_id=0,
    policy_seed=0,
    deterministic=False,
    penalty_weight=0.0,
    collect=False,
    keep_audit=False,
    context=None,
    trigger_config=None,
):
    """Deterministic given (scenario, policy weights, policy_seed)."""
    env = make_env(scenario, horizon, dt, config)
    env.reset()
    filt = CbfQpFilter() if filt is None else filt
    filt = clone(filt).set_params(params=env.params) if filt.params is None else clone(filt)
    if filt.params.m != env.m:
        raise ConfigError(f"filter has m={filt.params.m}, environment has m={env.m}", "safety.H")
    if isinstance(policy, PolicyParams) and (policy.m != env.m or policy.net.sizes[0] != env.d):
        raise ConfigError("policy dimensions do not match the environment", "learner")
    filt.reset(np.zeros(env.m))
    seed = getattr(scenario, "seed", None)
    rng = np.random.default_rng([int(seed if seed is not None else 0), int(policy_seed)])
    ctx = dict(context or {})
    X, U_nom, U_safe, logps, losses, pens, records, audit = [], [], [], [], [], [], [], []
    costs = 0.0
    step = 0
    while not env.done:
        x = env.features()
        u_nom, lp = _policy_action(policy, x, rng, deterministic)
        state, bars, ttx, regime = env.safety_inputs()
        u_prev = filt.u_prev_.copy()
        out = filt.step(state, u_nom, bars, ttx, regime, context=dict(ctx, run_id=run_id, episode_id=episode_id, step=step))
        loss, cost = env.step(out.u_safe)
        pen = penalty_weight * (out.record.slack_sum + float(out.record.solver_status != "optimal"))
        if store is not None:
            store.append(out.record)
        if keep_audit:
            audit.append(StepAudit(state, bars, out.params, u_prev, out.u_safe.copy(), out.record))
        X.append(x)
        U_nom.append(np.atleast_1d(u_nom))
        U_safe.append(out.u_safe)
        logps.append(lp)
        losses.append(loss)
        pens.append(pen)
        records.append(out.record)
        costs += cost
        step += 1
    pnl = float(env.pnl)
    gated = [r for r in records if r.gate_score is not None]
    passed = sum(not any(n.startswith("GATE:") for n in r.rule_names) for r in gated)
    result = EpisodeResult(
        pnl_T=pnl,
        loss_T=-pnl,
        cost_total=float(costs),
        n_steps=step,
        slack_events=sum(r.slack_sum > 0 for r in records),
        tightest_hist=dict(Counter(r.tightest_tag() or "none" for r in records)),
        gate_pass_rate=passed / len(gated) if gated else 1.0,
        rate_util_q=_quantiles([r.rate_util for r in records]),
        solver_ms_q=_quantiles([r.solver_time_ms for r in records]),
        intercepts=sum(r.intercepted for r in records),
        mean_unom_norm=float(np.mean([np.linalg.norm(u) for u in U_nom])) if U_nom else 0.0,
        seed=seed,
        cell=getattr(scenario, "cell", "toy"),
        index=getattr(scenario, "index", 0),
        step_losses=np.array(losses),
        records=records,
        triggers=eval_triggers(records, trigger_config or TriggerConfig()),
    )
    if collect:
        pens = np.array(pens)
        result.trajectory = Trajectory(np.array(X), np.array(U_nom), np.array(U_safe), np.array(logps), np.array(losses) + pens, pens)
    if keep_audit:
        result.audit = audit
    return result
