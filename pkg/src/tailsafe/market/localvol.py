"""Dupire local volatility from an SSVI surface with Tikhonov-smoothed derivatives."""

from dataclasses import dataclass

import numpy as np

from .._validation import as_finite_array, check_strictly_increasing
from ..exceptions import InputError, NumericalError
from .black import black_call

_NEG_TOL = 1e-10


@dataclass(frozen=True)
class LocalVolGrid:
    time_grid: np.ndarray
    strike_grid: np.ndarray
    sigma_loc: np.ndarray
    sigma_min: float = 0.01
    sigma_max: float = 3.0
    n_projected: int = 0

    def __post_init__(self):
        t = check_strictly_increasing(self.time_grid, "time_grid")
        k = check_strictly_increasing(self.strike_grid, "strike_grid")
        sig = as_finite_array(self.sigma_loc, "sigma_loc", ndim=2)
        if t.size < 2 or k.size < 2:
            raise InputError("local-vol grid needs at least 2 nodes per axis")
        if np.any(t < 0) or np.any(k <= 0):
            raise InputError("time_grid must be >= 0 and strike_grid > 0")
        if sig.shape != (t.size, k.size):
            raise InputError(f"sigma_loc shape {sig.shape} does not match grid ({t.size}, {k.size})")
        if not 0 <= self.sigma_min <= self.sigma_max:
            raise InputError("need 0 <= sigma_min <= sigma_max")
        if np.any(sig < self.sigma_min - 1e-15) or np.any(sig > self.sigma_max + 1e-15):
            raise InputError("sigma_loc outside clamp interval")
        for name, arr in (("time_grid", t), ("strike_grid", k), ("sigma_loc", sig)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def constant(cls, sigma, horizon, s_range=(1e-3, 1e6), sigma_min=0.0, sigma_max=None):
        t = np.array([0.0, float(horizon)])
        k = np.array(s_range, float)
        sigma_max = float(sigma) if sigma_max is None else sigma_max
        return cls(t, k, np.full((2, 2), float(sigma)), sigma_min=min(sigma_min, sigma), sigma_max=sigma_max)

    def sigma(self, t, s):
        """Bilinear lookup with flat extrapolation beyond the grid."""
        return _bilinear(self.time_grid, self.strike_grid, self.sigma_loc, t, s)

    def to_dict(self):
        return {
            "time_grid": self.time_grid.tolist(),
            "strike_grid": self.strike_grid.tolist(),
            "sigma_loc": self.sigma_loc.tolist(),
            "sigma_min": float(self.sigma_min),
            "sigma_max": float(self.sigma_max),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["time_grid"], float),
            np.asarray(d["strike_grid"], float),
            np.asarray(d["sigma_loc"], float),
            float(d.get("sigma_min", 0.01)),
            float(d.get("sigma_max", 3.0)),
        )


def _axis_weights(grid, x):
    x = np.clip(x, grid[0], grid[-1])
    i = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, grid.size - 2)
    frac = (x - grid[i]) / (grid[i + 1] - grid[i])
    return i, frac


def _bilinear(tg, kg, z, t, s):
    t = np.asarray(t, float)
    s = np.asarray(s, float)
    t, s = np.broadcast_arrays(t, s)
    i, a = _axis_weights(tg, t)
    j, b = _axis_weights(kg, s)
    out = (
        (1 - a) * (1 - b) * z[i, j]
        + (1 - a) * b * z[i, j + 1]
        + a * (1 - b) * z[i + 1, j]
        + a * b * z[i + 1, j + 1]
    )
    return out if out.ndim else float(out)


def _tikhonov_smooth(raw, eta, axis):
    """Solve (I + eta D2'D2) x = raw along ``axis``; D2 is the index second difference."""
    if eta <= 0:
        return raw
    n = raw.shape[axis]
    d2 = np.zeros((n - 2, n))
    idx = np.arange(n - 2)
    d2[idx, idx], d2[idx, idx + 1], d2[idx, idx + 2] = 1.0, -2.0, 1.0
    system = np.eye(n) + eta * d2.T @ d2
    moved = np.moveaxis(raw, axis, 0)
    return np.moveaxis(np.linalg.solve(system, moved.reshape(n, -1)).reshape(moved.shape), 0, axis)


def extract_local_vol(
    surface,
    time_grid,
    strike_grid,
    spot=1.0,
    rate=0.0,
    eta_t=1e-6,
    eta_kk=1e-6,
    eps_kk=1e-10,
    clamp=(0.01, 3.0),
):
    """Dupire local volatility on a (time, strike) grid.

    Works on the forward-normalized strike y = K / (spot * exp(rate * t)) and the
    undiscounted unit-forward call c(t, y), where the local variance reduces to
    dc/dt / (0.5 * y**2 * d2c/dy2).

    Returns
    -------
    LocalVolGrid
        Clamped local vols; ``n_projected`` counts curvature projections.
    """
    tg = check_strictly_increasing(time_grid, "time_grid")
    kg = check_strictly_increasing(strike_grid, "strike_grid")
    if tg.size < 4 or kg.size < 4:
        raise InputError("local-vol grid needs at least 4 nodes per axis")
    if np.any(kg <= 0) or eps_kk <= 0 or spot <= 0:
        raise InputError("strikes, spot and eps_kk must be positive")
    lo, hi = surface.maturities[0], surface.maturities[-1]
    surface.params_at(tg)  # range check

    def call(t, y):
        return black_call(1.0, y, surface.total_variance(np.log(y), t))

    t_col = tg[:, None]
    y = kg[None, :] / (spot * np.exp(rate * t_col))
    h_t = np.minimum(1e-4 * np.maximum(t_col, 1e-2), 0.5 * (hi - lo))
    t_up = np.minimum(t_col + h_t, hi)
    t_dn = np.maximum(t_col - h_t, lo)
    # y held fixed while differentiating in t
    d_t = (call(t_up, y) - call(t_dn, y)) / (t_up - t_dn)
    h_y = 1e-3 * y
    d_yy = (call(t_col, y + h_y) - 2 * call(t_col, y) + call(t_col, y - h_y)) / h_y**2

    d_t = _tikhonov_smooth(d_t, eta_t, axis=0)
    d_yy = _tikhonov_smooth(d_yy, eta_kk, axis=1)
    proj = d_yy < eps_kk
    n_projected = int(proj.sum())
    d_yy = np.where(proj, eps_kk, d_yy)
    if np.any(d_t < -_NEG_TOL):
        i, j = np.argwhere(d_t < -_NEG_TOL)[0]
        raise NumericalError(
            f"negative local variance at t={tg[i]:.6g}, K={kg[j]:.6g}", location=(float(tg[i]), float(kg[j]))
        )
    local_var = np.maximum(d_t, 0.0) / (0.5 * y**2 * d_yy)
    sigma = np.clip(np.sqrt(local_var), clamp[0], clamp[1])
    return LocalVolGrid(tg, kg, sigma, float(clamp[0]), float(clamp[1]), n_projected)
