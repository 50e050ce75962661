"""Log-Euler simulation of the local-volatility diffusion."""

from dataclasses import dataclass

import numpy as np

from ..exceptions import InputError, RangeError


@dataclass(frozen=True)
class VolFactor:
    """Log-OU multiplier on local vol, correlated with the spot shocks."""

    kappa: float = 2.0
    vol_of_vol: float = 0.5
    corr: float = -0.7


@dataclass
class PathSet:
    paths: np.ndarray
    dt: float
    rate: float
    seed: object
    vol_factor: np.ndarray = None

    @property
    def n_paths(self):
        return self.paths.shape[0]

    @property
    def n_steps(self):
        return self.paths.shape[1] - 1

    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    def to_csv(self, path):
        np.savetxt(path, self.paths, delimiter=",", fmt="%.10g")


def simulate_paths(lv, s0, rate, n_paths, n_steps, dt, seed, vol_factor=None):
    """Simulate spot paths; identical arguments give bit-identical output.

    ``vol_factor`` (a VolFactor) multiplies the local vol by exp(X_t) where X is a
    mean-reverting process whose shocks have correlation ``corr`` with the spot.
    """
    if s0 <= 0 or dt <= 0 or n_paths < 1 or n_steps < 1:
        raise InputError("need s0 > 0, dt > 0, n_paths >= 1, n_steps >= 1")
    horizon = n_steps * dt
    if horizon > lv.time_grid[-1] * (1 + 1e-12) + 1e-12:
        raise RangeError(f"horizon {horizon} exceeds local-vol grid end {lv.time_grid[-1]}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_steps, n_paths))
    paths = np.empty((n_paths, n_steps + 1))
    paths[:, 0] = s0
    log_s = np.full(n_paths, np.log(s0))
    factor_path = None
    if vol_factor is not None:
        b = rng.standard_normal((n_steps, n_paths))
        rho = vol_factor.corr
        decay = np.exp(-vol_factor.kappa * dt)
        sd = vol_factor.vol_of_vol * np.sqrt((1 - decay**2) / (2 * vol_factor.kappa))
        x = np.zeros(n_paths)
        factor_path = np.ones((n_paths, n_steps + 1))
    sqdt = np.sqrt(dt)
    for n in range(n_steps):
        sig = lv.sigma(n * dt, np.exp(log_s))
        if vol_factor is not None:
            sig = sig * np.exp(x)
            x = decay * x + sd * b[n]
            factor_path[:, n + 1] = np.exp(x)
            shock = rho * b[n] + np.sqrt(1 - rho**2) * z[n]
        else:
            shock = z[n]
        log_s = log_s + (rate - 0.5 * sig**2) * dt + sig * sqdt * shock
        paths[:, n + 1] = np.exp(log_s)
    return PathSet(paths, float(dt), float(rate), seed, factor_path)
