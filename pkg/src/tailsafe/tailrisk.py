"""Tilted quantile sampling, SNIS CVaR, the coverage PID, empirical VaR/ES and the KL-DRO bound."""

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from ._validation import as_finite_array, check_random_state
from .exceptions import EstimationError, InputError, NumericalError


def _tilt_norm(T):
    # 1 - exp(-1/T), stable for large T
    return -math.expm1(-1.0 / T)


def tilt_cdf(tau, T):
    """CDF of p_T(tau) ~ exp(-tau/T) on [0, 1]."""
    return np.expm1(-np.asarray(tau, float) / T) / math.expm1(-1.0 / T)


def tilt_pdf(tau, T):
    return np.exp(-np.asarray(tau, float) / T) / (T * _tilt_norm(T))


def boost_count(gamma_tail, K, alpha):
    """Extra tail draws ceil((gamma - 1) K alpha); the 1e-9 guard absorbs float noise."""
    return int(math.ceil((gamma_tail - 1.0) * K * alpha - 1e-9)) if gamma_tail > 1 else 0


def expected_coverage(T, gamma_tail, alpha, K):
    """Closed-form E[mean(in_tail)] for a batch of K tilted draws plus the boost block."""
    B = boost_count(gamma_tail, K, alpha)
    return (K * float(tilt_cdf(alpha, T)) + B) / (K + B)


@dataclass
class QuantileBatch:
    taus: np.ndarray
    weights: np.ndarray  # self-normalized, > 0
    in_tail: np.ndarray
    boost_applied: int
    alpha: float
    proposal: np.ndarray = None  # mixture density at each tau

    @property
    def K(self):
        return self.taus.size

    @property
    def alpha_eff_hat(self):
        return float(np.mean(self.in_tail))


@dataclass
class CoverageState:
    """PID state for (T, gamma_tail).

    Positive error (under-coverage) lowers T and raises gamma_tail; the gains
    are stored as positive numbers and the sign is applied in ``pid_update``.
    """

    T: float = 1.0
    gamma_tail: float = 1.0
    err_integral: float = 0.0
    err_prev: float = None
    gains_T: tuple = (0.5, 0.05, 0.1)
    gains_gamma: tuple = (1.0, 0.1, 0.2)
    w_target: float = 0.075
    T_bounds: tuple = (0.05, 5.0)
    gamma_bounds: tuple = (1.0, 4.0)
    windup_cap: float = 5.0
    n_updates: int = 0
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        lo, hi = self.T_bounds
        glo, ghi = self.gamma_bounds
        if not (0 < lo <= hi and 1 <= glo <= ghi):
            raise InputError("need 0 < T_min <= T_max and 1 <= gamma_min <= gamma_max")
        if not 0 < self.w_target < 1:
            raise InputError("w_target must lie in (0, 1)")
        self.T = float(np.clip(self.T, lo, hi))
        self.gamma_tail = float(np.clip(self.gamma_tail, glo, ghi))

    @classmethod
    def for_alpha(cls, alpha, target_mult=1.5, **kw):
        return cls(w_target=target_mult * alpha, **kw)


def sample_quantiles(ctrl, alpha, K, rng=None):
    """Draw K tilted quantile levels plus the tail-boost block and their SNIS weights."""
    T = ctrl.T if isinstance(ctrl, CoverageState) else float(ctrl[0])
    gamma = ctrl.gamma_tail if isinstance(ctrl, CoverageState) else float(ctrl[1])
    if not T > 0:
        raise InputError("temperature T must be positive")
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    if int(K) != K or K < 1:
        raise InputError("K must be a positive integer")
    K = int(K)
    rng = check_random_state(rng)
    base = -T * np.log1p(-rng.random(K) * _tilt_norm(T))
    B = boost_count(gamma, K, alpha)
    F_alpha = float(tilt_cdf(alpha, T))
    extra = -T * np.log1p(rng.random(B) * math.expm1(-alpha / T)) if B else np.zeros(0)
    taus = np.clip(np.concatenate([base, extra]), 0.0, 1.0)
    in_tail = taus <= alpha
    dens = tilt_pdf(taus, T)
    q = (K * dens + B * dens / F_alpha * in_tail) / (K + B)
    w = 1.0 / q
    return QuantileBatch(taus, w / w.sum(), in_tail, B, float(alpha), q)


def cvar_snis(batch, losses_at_tau, alpha=None):
    """Self-normalized tail average; returns (cvar_hat, alpha_eff_hat)."""
    alpha = batch.alpha if alpha is None else alpha
    L = as_finite_array(losses_at_tau, "losses_at_tau", ndim=1)
    if L.size != batch.K:
        raise InputError("one loss per sampled quantile is required")
    tail = batch.taus <= alpha
    if not tail.any():
        raise EstimationError("no quantile draws in the tail block; raise gamma_tail or lower T")
    w = batch.weights[tail]
    return float(w @ L[tail] / w.sum()), float(np.mean(tail))


def pid_update(ctrl, w_hat):
    """One PID step on (T, gamma_tail) from the measured coverage ``w_hat``.

    The integral is frozen (conditional integration) while either output sits
    at a clip bound in the direction the error pushes it.
    """
    if not 0 <= w_hat <= 1:
        raise InputError("w_hat must lie in [0, 1]")
    e = ctrl.w_target - w_hat
    d = 0.0 if ctrl.err_prev is None else e - ctrl.err_prev
    kp, ki, kd = ctrl.gains_T
    gp, gi, gd = ctrl.gains_gamma
    (t_lo, t_hi), (g_lo, g_hi) = ctrl.T_bounds, ctrl.gamma_bounds

    pinned = (e > 0 and (ctrl.T <= t_lo or ctrl.gamma_tail >= g_hi)) or (
        e < 0 and (ctrl.T >= t_hi or ctrl.gamma_tail <= g_lo)
    )
    integral = ctrl.err_integral if pinned else ctrl.err_integral + e
    integral = float(np.clip(integral, -ctrl.windup_cap, ctrl.windup_cap))

    T_new = float(np.clip(ctrl.T - (kp * e + ki * integral + kd * d), t_lo, t_hi))
    g_new = float(np.clip(ctrl.gamma_tail + gp * e + gi * integral + gd * d, g_lo, g_hi))
    return replace(
        ctrl,
        T=T_new,
        gamma_tail=g_new,
        err_integral=integral,
        err_prev=e,
        n_updates=ctrl.n_updates + 1,
        history=ctrl.history + [(ctrl.n_updates + 1, T_new, g_new, float(w_hat))],
    )


def write_coverage_csv(path, ctrl, alpha):
    """Coverage trajectory (step, T, gamma_tail, w_hat, alpha)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "T", "gamma_tail", "w_hat", "alpha"])
        for step, T, g, w in ctrl.history:
            writer.writerow([step, T, g, w, alpha])


def var_es_empirical(losses, alpha):
    """Lower-interpolated VaR at level alpha and ES = mean of losses >= VaR (ties included)."""
    L = np.sort(np.asarray(losses, float).ravel())
    if L.size == 0:
        raise InputError("empty loss sample")
    if not np.all(np.isfinite(L)):
        raise InputError("losses must be finite")
    if not 0 <= alpha < 1:
        raise InputError("alpha must lie in [0, 1)")
    need = math.ceil(1.0 / (1.0 - alpha) - 1e-9)
    if L.size < need:
        raise InputError(f"need at least {need} losses for alpha={alpha}")
    idx = max(int(math.ceil(alpha * L.size - 1e-9)), 1) - 1
    var = float(L[idx])
    # centred at VaR so that a degenerate tail returns VaR exactly
    return var, var + float(np.mean(L[L >= var] - var))


def cvar_surrogate(losses, alpha, probs=None, t_grid=None):
    """min_t t + E[(L-t)+]/alpha; exact over the support points when no grid is given."""
    L = np.asarray(losses, float).ravel()
    p = np.full(L.size, 1.0 / L.size) if probs is None else np.asarray(probs, float)
    ts = np.unique(L) if t_grid is None else np.asarray(t_grid, float)
    vals = ts + (np.maximum(L[None, :] - ts[:, None], 0.0) @ p) / alpha
    return float(vals.min())


def kl_dro_bound(base_samples, rho, alpha, eta_grid=None, t_grid=None, probs=None):
    """Donsker-Varadhan upper bound on worst-case CVaR over the KL ball of radius ``rho``.

    min over (t, eta) of t + (rho + log E_P[exp(eta (L - t)+)]) / (alpha eta).
    ``probs`` gives point masses for discrete distributions (default: empirical).
    """
    L = as_finite_array(base_samples, "base_samples").ravel()
    if L.size == 0:
        raise InputError("empty sample")
    if rho < 0 or not 0 < alpha <= 1:
        raise InputError("need rho >= 0 and alpha in (0, 1]")
    logp = np.full(L.size, -np.log(L.size)) if probs is None else np.log(np.asarray(probs, float))
    ts = np.linspace(L.min(), L.max(), 64) if t_grid is None else np.asarray(t_grid, float).ravel()
    # default eta grid in units of the loss spread so the bound is scale-free
    spread = float(L.max() - L.min()) or 1.0
    etas = np.logspace(-3, 3, 31) / spread if eta_grid is None else np.asarray(eta_grid, float).ravel()
    if ts.size == 0 or etas.size == 0 or np.any(etas <= 0):
        raise InputError("grids must be nonempty and eta > 0")
    X = np.maximum(L[None, :] - ts[:, None], 0.0)  # (nt, n)
    with np.errstate(over="ignore", invalid="ignore"):
        lme = logsumexp(etas[None, :, None] * X[:, None, :] + logp[None, None, :], axis=2)
        vals = ts[:, None] + (rho + lme) / (alpha * etas[None, :])
    bad = ~np.isfinite(vals)
    if bad.all():
        raise NumericalError("every (t, eta) cell overflowed", location=None)
    if bad.any():
        warnings.warn(f"skipped {int(bad.sum())} (t, eta) cells with non-finite moments", RuntimeWarning)
    return float(np.min(vals[~bad]))
