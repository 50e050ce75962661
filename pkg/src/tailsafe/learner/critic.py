"""IQN-style quantile critic Q(x, u; tau), quantile Huber loss and the CVaR value."""

from dataclasses import dataclass

import numpy as np

from .._validation import check_random_state
from ..exceptions import EstimationError, InputError, TrainingError
from .nets import Adam, Mlp


def cosine_features(taus, n_cos=32):
    """cos(pi i tau) for i = 0..n_cos-1, shape (k, n_cos)."""
    return np.cos(np.pi * np.arange(n_cos)[None, :] * np.asarray(taus, float).ravel()[:, None])


@dataclass
class CriticParams:
    """trunk([x, u]) * tanh(embed(cos(pi i tau))) -> head -> Q."""

    trunk: Mlp
    embed: Mlp
    head: Mlp
    n_cos: int = 32
    opt: Adam = None

    @classmethod
    def init(cls, d_in, m, hidden=(64,), width=64, n_cos=32, rng=None, lr=1e-3):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        trunk = Mlp((d_in + m, *hidden, width), rng)
        embed = Mlp((n_cos, width), rng)
        head = Mlp((width, *hidden, 1), rng)
        psi = cls(trunk, embed, head, int(n_cos))
        psi.opt = Adam(psi.params, lr=lr, max_grad_norm=10.0)
        return psi

    @property
    def params(self):
        return self.trunk.params + self.embed.params + self.head.params

    def copy(self):
        return CriticParams(self.trunk.copy(), self.embed.copy(), self.head.copy(), self.n_cos)

    def forward(self, X, U, taus):
        """Q for every (row, tau) pair: shape (n, k)."""
        XU = np.hstack([np.atleast_2d(X), np.atleast_2d(U)])
        taus = np.asarray(taus, float).ravel()
        n, k = XU.shape[0], taus.size
        t_out, t_acts = self.trunk.forward(XU)
        e_pre, e_acts = self.embed.forward(cosine_features(taus, self.n_cos))
        e = np.tanh(e_pre)
        fused = (t_out[:, None, :] * e[None, :, :]).reshape(n * k, -1)
        q, h_acts = self.head.forward(fused)
        return q.reshape(n, k), (t_out, t_acts, e, e_acts, h_acts, n, k)

    def __call__(self, X, U, taus):
        return self.forward(X, U, taus)[0]

    def backward(self, cache, g_q):
        """Gradients of sum(g_q * Q) for all parameters, in ``params`` order."""
        t_out, t_acts, e, e_acts, h_acts, n, k = cache
        g_head, g_fused = self.head.backward(h_acts, g_q.reshape(n * k, 1))
        g_fused = g_fused.reshape(n, k, -1)
        g_t = np.einsum("nkw,kw->nw", g_fused, e)
        g_e = np.einsum("nkw,nw->kw", g_fused, t_out) * (1 - e * e)
        g_trunk = self.trunk.backward(t_acts, g_t)[0]
        g_embed = self.embed.backward(e_acts, g_e)[0]
        return g_trunk + g_embed + g_head


def huber(d, kappa):
    a = np.abs(d)
    return np.where(a <= kappa, 0.5 * d * d, kappa * (a - 0.5 * kappa))


def quantile_huber_loss(q_pred, taus, targets, kappa=1.0):
    """Mean over (i, j, k) of |tau_j - 1{delta<0}| Huber(delta), delta = target_ik - q_ij.

    Returns (loss, dloss/dq_pred).
    """
    taus = np.asarray(taus, float).ravel()
    delta = targets[:, None, :] - q_pred[:, :, None]  # (n, K, K')
    w = np.abs(taus[None, :, None] - (delta < 0))
    count = delta.size
    loss = float(np.sum(w * huber(delta, kappa)) / count)
    dh = np.clip(delta, -kappa, kappa)
    grad = -np.sum(w * dh, axis=2) / count
    return loss, grad


@dataclass
class Transitions:
    X: np.ndarray
    U: np.ndarray
    targets: np.ndarray  # (n, K') sampled target quantiles of the return


def critic_targets(psi_target, step_losses, X_next, U_next, done, gamma, taus_next):
    """-l_t + gamma Q(x', u'; tau') with the bootstrap dropped at terminal steps; shape (n, K')."""
    q_next = psi_target(X_next, U_next, taus_next)
    live = (1.0 - np.asarray(done, float))[:, None]
    return -np.asarray(step_losses, float)[:, None] + gamma * live * q_next


def quantile_huber_update(psi, transitions, taus, kappa_huber=1.0, minibatch=None, rng=None):
    """One Adam step on the quantile Huber loss; psi is updated in place and returned with the loss."""
    taus = getattr(taus, "taus", taus)
    X, U, Y = transitions.X, transitions.U, transitions.targets
    if minibatch is not None and minibatch < X.shape[0]:
        idx = check_random_state(rng).choice(X.shape[0], minibatch, replace=False)
        X, U, Y = X[idx], U[idx], Y[idx]
    q, cache = psi.forward(X, U, taus)
    loss, g_q = quantile_huber_loss(q, taus, Y, kappa_huber)
    grads = psi.backward(cache, g_q)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingError("non-finite critic loss or gradient", dump={"X": X, "U": U, "targets": Y, "taus": taus})
    if psi.opt is None:
        psi.opt = Adam(psi.params)
    psi.opt.step(grads)
    return psi, loss


def cvar_value(psi, X, theta, alpha, batch, n_action_samples=4, rng=None):
    """V_alpha(x): SNIS tail average over tau <= alpha of -mean_a Q(x, a; tau), a ~ pi_theta(.|x)."""
    X = np.atleast_2d(np.asarray(X, float))
    tail = batch.taus <= alpha
    if not tail.any():
        raise EstimationError("no quantile draws in the tail block")
    if n_action_samples < 1:
        raise InputError("n_action_samples must be >= 1")
    rng = check_random_state(rng)
    taus, w = batch.taus[tail], batch.weights[tail]
    w = w / w.sum()
    mu, ls, _ = theta.forward(X)
    n, m = mu.shape
    A = mu[None] + np.exp(ls)[None] * rng.standard_normal((n_action_samples, n, m))
    Xr = np.broadcast_to(X, (n_action_samples,) + X.shape).reshape(-1, X.shape[1])
    q = psi(Xr, A.reshape(-1, m), taus).reshape(n_action_samples, n, -1).mean(axis=0)
    return -(q @ w)
