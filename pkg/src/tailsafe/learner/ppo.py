"""CVaR-weighted GAE and the KL/entropy-regularized clipped PPO actor update."""

from dataclasses import dataclass, field

import numpy as np

from .._validation import check_random_state
from ..exceptions import InputError, TrainingError
from ..tailrisk import CoverageState
from .nets import Adam
from .policy import _kl_terms, _logp


def cvar_gae(step_losses, values, gamma=0.99, lam=0.95):
    """A_t = sum_l (gamma lam)^l delta_{t+l}, delta_t = l_t - V(x_t) + gamma V(x_{t+1}).

    ``values`` has one more entry than ``step_losses``: the last one is the
    terminal value (0 for a finished episode).
    """
    ell = np.asarray(step_losses, float).ravel()
    V = np.asarray(values, float).ravel()
    if V.size != ell.size + 1:
        raise InputError("values must have len(step_losses) + 1 entries (terminal value last)")
    delta = ell - V[:-1] + gamma * V[1:]
    adv = np.empty_like(delta)
    acc = 0.0
    for t in range(delta.size - 1, -1, -1):
        acc = delta[t] + gamma * lam * acc
        adv[t] = acc
    return adv


@dataclass
class Rollout:
    X: np.ndarray
    U: np.ndarray  # nominal actions, the ones the policy density refers to
    logp_old: np.ndarray
    adv: np.ndarray

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx):
        return Rollout(self.X[idx], self.U[idx], self.logp_old[idx], self.adv[idx])


def actor_objective(theta, ref, batch, clip_eps=0.2, lambda_kl=0.1, lambda_ent=1e-3, grad=True):
    """Minimized objective: mean min(r A, clip(r) A) + lambda_kl mean KL(theta||ref) - lambda_ent mean H.

    Returns (value, grads or None, stats). The clipped term is taken as
    written; the entropy enters with a minus sign so that it acts as a bonus.
    """
    mu, ls, cache = theta.forward(batch.X)
    mu_r, ls_r, _ = ref.forward(batch.X)
    n, m = mu.shape
    A = batch.adv
    lp = _logp(mu, ls, batch.U)
    r = np.exp(lp - batch.logp_old)
    rc = np.clip(r, 1 - clip_eps, 1 + clip_eps)
    unclipped = r * A <= rc * A
    surr = np.where(unclipped, r * A, rc * A)
    kl = np.sum(_kl_terms(mu, ls, mu_r, ls_r), axis=1)
    ent = np.sum(ls, axis=1) + 0.5 * m * (1 + np.log(2 * np.pi))
    value = float(surr.mean() + lambda_kl * kl.mean() - lambda_ent * ent.mean())
    stats = {
        "kl_step": float(np.maximum(kl, 0).mean()),
        "entropy": float(ent.mean()),
        "clip_frac": float(np.mean(np.abs(r - 1) > clip_eps)),
    }
    if not grad:
        return value, None, stats
    inv_var = np.exp(-2 * ls)
    diff = batch.U - mu
    # d surr / d logp is r A on the unclipped branch, 0 where the clip is flat
    c = np.where(unclipped, r * A, 0.0)[:, None] / n
    g_mu = c * diff * inv_var
    g_ls = c * (diff * diff * inv_var - 1.0)
    inv_var_r = np.exp(-2 * ls_r)
    g_mu += lambda_kl / n * (mu - mu_r) * inv_var_r
    g_ls += lambda_kl / n * (np.exp(2 * ls) * inv_var_r - 1.0)
    g_ls -= lambda_ent / n
    return value, theta.backward(cache, g_mu, g_ls), stats


@dataclass
class TrainState:
    theta: object
    psi: object
    ref: object
    ctrl: CoverageState
    step: int = 0
    total_steps: int = 100
    alpha_start: float = 0.10
    alpha_target: float = 0.025
    lambda_kl: float = 0.1
    lambda_ent: float = 1e-3
    gamma: float = 0.99
    lambda_gae: float = 0.95
    clip_eps: float = 0.2
    kl_ceiling: float = 0.02
    ema_rate: float = 0.5
    lr_actor: float = 3e-3
    minibatch: int = 64
    opt: Adam = None
    kl_history: list = field(default_factory=list)

    @property
    def alpha(self):
        from .schedule import alpha_schedule

        return alpha_schedule(min(self.step, self.total_steps), self.total_steps, self.alpha_start, self.alpha_target)

    def __post_init__(self):
        if not self.alpha_target <= self.alpha_start:
            raise InputError("alpha_target must not exceed alpha_start")
        if self.opt is None:
            self.opt = Adam(self.theta.params, lr=self.lr_actor, max_grad_norm=5.0)


def ppo_update(state, rollout, rng=None, normalize_adv=True):
    """One epoch of minibatch steps on the actor objective.

    The epoch stops early, undoing the offending step, once the mean KL to the
    reference over the whole rollout exceeds ``kl_ceiling``. Returns (state, stats)
    with kl_step measured on the full rollout after the epoch.
    """
    rng = check_random_state(rng)
    if len(rollout) == 0:
        raise InputError("empty rollout")
    adv = np.asarray(rollout.adv, float)
    if normalize_adv and adv.size > 1 and adv.std() > 0:
        adv = (adv - adv.mean()) / adv.std()
    data = Rollout(rollout.X, rollout.U, rollout.logp_old, adv)
    order = rng.permutation(len(data))
    mb = max(1, min(state.minibatch, len(data)))
    stopped = False
    n_steps = 0
    for start in range(0, len(data), mb):
        part = data.subset(order[start : start + mb])
        _, grads, _ = actor_objective(state.theta, state.ref, part, state.clip_eps, state.lambda_kl, state.lambda_ent)
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingError("non-finite actor gradient", dump={"X": part.X, "U": part.U, "adv": part.adv})
        saved = [p.copy() for p in state.theta.params]
        state.opt.step(grads)
        _, _, after = actor_objective(state.theta, state.ref, data, grad=False)
        if after["kl_step"] > state.kl_ceiling:
            for p, s in zip(state.theta.params, saved):
                p[...] = s
            stopped = True
            break
        n_steps += 1
    _, _, stats = actor_objective(state.theta, state.ref, data, state.clip_eps, state.lambda_kl, state.lambda_ent, grad=False)
    stats.update(early_stop=stopped, n_steps=n_steps)
    state.kl_history.append(stats["kl_step"])
    return state, stats
