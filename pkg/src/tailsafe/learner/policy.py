"""Diagonal-Gaussian policy: sampling, log-density, closed-form KL, entropy, EMA reference."""

import math
from dataclasses import dataclass

import numpy as np

from .._validation import as_finite_array, check_random_state
from ..exceptions import InputError
from .nets import Mlp

_LOG2PI = math.log(2 * math.pi)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class PolicyParams:
    """Network x -> (mean, raw); log_std = lo + (hi - lo) sigmoid(raw) stays inside its bounds."""

    net: Mlp
    m: int
    log_std_min: float = -5.0
    log_std_max: float = 1.0

    @classmethod
    def init(cls, d_in, m, hidden=(64, 64), rng=None, log_std_min=-5.0, log_std_max=1.0, log_std_init=None, mean_scale=0.1):
        if not log_std_min < log_std_max:
            raise InputError("need log_std_min < log_std_max")
        net = Mlp((d_in, *hidden, 2 * m), rng, out_scale=mean_scale)
        theta = cls(net, int(m), float(log_std_min), float(log_std_max))
        if log_std_init is not None:
            frac = (log_std_init - log_std_min) / (log_std_max - log_std_min)
            if not 0 < frac < 1:
                raise InputError("log_std_init must lie strictly inside the log_std bounds")
            net.params[-1][m:] = math.log(frac / (1 - frac))
        return theta

    @property
    def params(self):
        return self.net.params

    def copy(self):
        return PolicyParams(self.net.copy(), self.m, self.log_std_min, self.log_std_max)

    def forward(self, X):
        """Returns (mean, log_std, cache) for features X of shape (n, d)."""
        X = np.atleast_2d(np.asarray(X, float))
        out, acts = self.net.forward(X)
        s = _sigmoid(out[:, self.m :])
        span = self.log_std_max - self.log_std_min
        return out[:, : self.m], self.log_std_min + span * s, (acts, s)

    def backward(self, cache, g_mean, g_log_std):
        """Parameter gradients given dJ/dmean and dJ/dlog_std, each (n, m)."""
        acts, s = cache
        span = self.log_std_max - self.log_std_min
        g_out = np.hstack([g_mean, g_log_std * span * s * (1 - s)])
        return self.net.backward(acts, g_out)[0]


def _logp(mu, log_std, U):
    z = (U - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * _LOG2PI, axis=-1)


def log_prob(theta, X, U):
    mu, ls, _ = theta.forward(X)
    return _logp(mu, ls, np.atleast_2d(U))


def policy_sample(theta, x, rng=None):
    """Draw u ~ N(mean(x), diag(exp(log_std))^2); returns (u, log_prob). ``x`` may be one state or a batch."""
    x = as_finite_array(x, "x")
    single = x.ndim == 1
    rng = check_random_state(rng)
    mu, ls, _ = theta.forward(x)
    U = mu + np.exp(ls) * rng.standard_normal(mu.shape)
    lp = _logp(mu, ls, U)
    return (U[0], float(lp[0])) if single else (U, lp)


def _kl_terms(mu, ls, mu_r, ls_r):
    var_ratio = np.exp(2 * (ls - ls_r))
    diff2 = (mu - mu_r) ** 2 * np.exp(-2 * ls_r)
    return ls_r - ls + 0.5 * (var_ratio + diff2) - 0.5


def gaussian_kl(theta, ref, X):
    """Per-state KL(pi_theta(.|x) || pi_ref(.|x)), closed form, summed over action dims."""
    mu, ls, _ = theta.forward(X)
    mu_r, ls_r, _ = ref.forward(X)
    return np.maximum(np.sum(_kl_terms(mu, ls, mu_r, ls_r), axis=1), 0.0)


def entropy(theta, X):
    _, ls, _ = theta.forward(X)
    return np.sum(ls + 0.5 * (1 + _LOG2PI), axis=1)


def ema_update(ref, theta, rate):
    """ref' = (1 - rate) ref + rate theta, elementwise over every weight."""
    if not 0 < rate <= 1:
        raise InputError("EMA rate must lie in (0, 1]")
    new = ref.copy()
    for r, t in zip(new.net.params, theta.net.params):
        r *= 1 - rate
        r += rate * t
    return new
