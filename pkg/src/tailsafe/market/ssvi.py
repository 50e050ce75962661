"""SSVI total-variance surface, static-arbitrage probe and robust calibration."""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import as_finite_array, check_strictly_increasing
from ..exceptions import CalibrationError, InputError, RangeError
from .black import black_call

_TAU_TOL = 1e-12


@dataclass(frozen=True)
class SsviSurface:
    """Per-pillar SSVI parameters; linear in maturity between pillars."""

    maturities: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        mats = check_strictly_increasing(self.maturities, "maturities")
        theta = as_finite_array(self.theta, "theta", ndim=1)
        phi = as_finite_array(self.phi, "phi", ndim=1)
        rho = as_finite_array(self.rho, "rho", ndim=1)
        n = mats.size
        if n == 0 or not (theta.size == phi.size == rho.size == n):
            raise InputError("maturities, theta, phi and rho must have equal nonzero length")
        if np.any(mats <= 0):
            raise InputError("maturities must be positive")
        if np.any(theta <= 0) or np.any(phi <= 0):
            raise InputError("theta and phi must be positive")
        if np.any(np.abs(rho) >= 1):
            raise InputError("rho must lie in (-1, 1)")
        for name, arr in (("maturities", mats), ("theta", theta), ("phi", phi), ("rho", rho)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def params_at(self, tau):
        tau = np.asarray(tau, dtype=float)
        lo, hi = self.maturities[0], self.maturities[-1]
        if np.any(tau < lo - _TAU_TOL) or np.any(tau > hi + _TAU_TOL):
            raise RangeError(f"tau outside pillar range [{lo}, {hi}]")
        tau = np.clip(tau, lo, hi)
        if self.maturities.size == 1:
            shape = tau.shape
            return (np.full(shape, self.theta[0]), np.full(shape, self.phi[0]), np.full(shape, self.rho[0]))
        return tuple(np.interp(tau, self.maturities, p) for p in (self.theta, self.phi, self.rho))

    def total_variance(self, k, tau):
        return ssvi_total_variance(self, k, tau)

    def implied_vol(self, k, tau):
        return np.sqrt(self.total_variance(k, tau) / np.asarray(tau, float))

    def scaled(self, level=1.0, phi_mult=1.0, rho_shift=0.0):
        """Return a copy with theta scaled, phi scaled and rho shifted."""
        return SsviSurface(
            self.maturities,
            self.theta * level,
            self.phi * phi_mult,
            np.clip(self.rho + rho_shift, -0.999, 0.999),
        )

    def to_dict(self):
        return {
            "maturities": [float(x) for x in self.maturities],
            "theta": [float(x) for x in self.theta],
            "phi": [float(x) for x in self.phi],
            "rho": [float(x) for x in self.rho],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(*(np.asarray(d[key], float) for key in ("maturities", "theta", "phi", "rho")))
        except KeyError as exc:
            raise InputError(f"surface config missing key {exc}") from None


def ssvi_total_variance(surface, k, tau):
    """Total implied variance w(k, tau); parameters interpolated linearly in tau."""
    k = np.asarray(k, dtype=float)
    if not np.all(np.isfinite(k)):
        raise InputError("log-moneyness must be finite")
    theta, phi, rho = surface.params_at(tau)
    pk = phi * k
    w = 0.5 * theta * (1.0 + rho * pk + np.sqrt((pk + rho) ** 2 + 1.0 - rho**2))
    return w if np.ndim(w) else float(w)


@dataclass
class Violation:
    kind: str
    k: float
    tau: float
    magnitude: float


@dataclass
class ArbitrageReport:
    violations: list = field(default_factory=list)
    # Gatheral-Jacquier sufficient-condition surrogate; informational only.
    surrogate_flags: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def kinds(self):
        return {v.kind for v in self.violations}


def _second_divided_difference(x, y):
    dx_left = x[1:-1] - x[:-2]
    dx_right = x[2:] - x[1:-1]
    slope_left = (y[..., 1:-1] - y[..., :-2]) / dx_left
    slope_right = (y[..., 2:] - y[..., 1:-1]) / dx_right
    return 2.0 * (slope_right - slope_left) / (dx_left + dx_right)


def check_no_arbitrage(surface, k_window=(-1.5, 1.5), n_probe=61, tol=1e-8):
    """Probe a lattice for calendar and butterfly (call convexity) violations."""
    if n_probe < 3:
        raise InputError("n_probe must be at least 3")
    ks = np.linspace(k_window[0], k_window[1], n_probe)
    lo, hi = surface.maturities[0], surface.maturities[-1]
    taus = np.unique(np.concatenate([surface.maturities, np.linspace(lo, hi, n_probe)]))
    w = ssvi_total_variance(surface, ks[None, :], taus[:, None])
    report = ArbitrageReport()

    dw = np.diff(w, axis=0)
    for i, j in zip(*np.nonzero(dw < -tol)):
        report.violations.append(Violation("calendar", float(ks[j]), float(taus[i + 1]), float(-dw[i, j])))

    strikes = np.exp(ks)
    calls = black_call(1.0, strikes[None, :], w)
    convexity = _second_divided_difference(strikes, calls)
    for i, j in zip(*np.nonzero(convexity < -tol)):
        report.violations.append(
            Violation("butterfly", float(ks[j + 1]), float(taus[i]), float(-convexity[i, j]))
        )

    for tau, th, ph, rh in zip(surface.maturities, surface.theta, surface.phi, surface.rho):
        a = th * ph * (1 + abs(rh))
        b = th * ph**2 * (1 + abs(rh))
        if a > 4 + 1e-12 or b > 4 + 1e-12:
            report.surrogate_flags.append({"tau": float(tau), "theta_phi": float(a), "theta_phi2": float(b)})
    return report


@dataclass
class CalibConfig:
    loss: str = "huber"  # or "linear"
    huber_delta: float = 0.005  # implied-vol units
    lambda_k: float = 1e-8
    lambda_tau: float = 1e-8
    k_penalty_grid: tuple = (-1.0, 1.0, 21)
    max_iter: int = 2000
    tol: float = 1e-15


@dataclass
class CalibrationResult:
    surface: SsviSurface
    report: ArbitrageReport
    flags: list
    cost: float
    n_iter: int


def _phi_cap(theta, rho):
    # smooth |rho| keeps the map differentiable at rho = 0
    one_plus = 1.0 + np.sqrt(rho**2 + 1e-14)
    return np.minimum(4.0 / (theta * one_plus), 2.0 / np.sqrt(theta * one_plus))


def _unpack(x, n):
    a, b, c = x[:n], x[n : 2 * n], x[2 * n :]
    theta = np.cumsum(np.exp(a))
    rho = 0.999 * np.tanh(b)
    phi = _phi_cap(theta, rho) * expit(c)
    return theta, phi, rho


def _pack(theta, phi, rho):
    inc = np.diff(np.concatenate([[0.0], theta]))
    a = np.log(np.maximum(inc, 1e-12))
    b = np.arctanh(np.clip(rho / 0.999, -0.999999, 0.999999))
    frac = np.clip(phi / _phi_cap(theta, rho), 1e-9, 1 - 1e-9)
    c = np.log(frac / (1 - frac))
    return np.concatenate([a, b, c])


def _parse_quotes(quotes):
    q = as_finite_array(quotes, "quotes")
    if q.ndim != 2 or q.shape[1] not in (3, 4):
        raise InputError("quotes must be rows of (k, tau, iv[, weight])")
    if q.shape[1] == 3:
        q = np.column_stack([q, np.ones(len(q))])
    if np.any(q[:, 1] <= 0) or np.any(q[:, 2] <= 0) or np.any(q[:, 3] < 0):
        raise InputError("quotes need tau > 0, iv > 0 and weight >= 0")
    return q


def _raw_atm_theta(q, pillars):
    out = []
    for tau in pillars:
        rows = q[q[:, 1] == tau]
        order = np.argsort(rows[:, 0])
        out.append(float(np.interp(0.0, rows[order, 0], rows[order, 2] ** 2 * tau)))
    return np.array(out)


def calibrate_ssvi(quotes, config=None):
    """Fit one (theta, phi, rho) triple per pillar maturity to implied-vol quotes.

    The parameterization keeps theta increasing and the sufficient butterfly
    bounds satisfied, so the optimizer itself is unconstrained.
    """
    config = config or CalibConfig()
    q = _parse_quotes(quotes)
    pillars = np.unique(q[:, 1])
    n = pillars.size
    counts = np.array([(q[:, 1] == t).sum() for t in pillars])
    if np.any(counts < 3):
        raise InputError("need at least 3 quotes per pillar maturity")
    pillar_idx = np.searchsorted(pillars, q[:, 1])
    sqrt_w = np.sqrt(q[:, 3])
    k_pen = np.linspace(*config.k_penalty_grid[:2], int(config.k_penalty_grid[2]))
    dk = k_pen[1] - k_pen[0]

    raw_theta = _raw_atm_theta(q, pillars)
    flags = []
    if np.any(np.diff(raw_theta) <= 0):
        flags.append("calendar_projected: quoted ATM total variance not increasing in maturity")
    theta0 = np.maximum.accumulate(np.maximum(raw_theta, 1e-6))
    theta0 = theta0 + 1e-6 * np.arange(n)
    rho0 = np.zeros(n)
    phi0 = 0.5 * _phi_cap(theta0, rho0)
    x0 = _pack(theta0, phi0, rho0)

    def residuals(x):
        theta, phi, rho = _unpack(x, n)
        th, ph, rh = theta[pillar_idx], phi[pillar_idx], rho[pillar_idx]
        pk = ph * q[:, 0]
        w = 0.5 * th * (1 + rh * pk + np.sqrt((pk + rh) ** 2 + 1 - rh**2))
        res = [sqrt_w * (np.sqrt(np.maximum(w, 1e-300) / q[:, 1]) - q[:, 2])]
        if config.lambda_k > 0 or config.lambda_tau > 0:
            pk = phi[:, None] * k_pen[None, :]
            grid_w = 0.5 * theta[:, None] * (
                1 + rho[:, None] * pk + np.sqrt((pk + rho[:, None]) ** 2 + 1 - rho[:, None] ** 2)
            )
            if config.lambda_k > 0:
                d2k = (grid_w[:, 2:] - 2 * grid_w[:, 1:-1] + grid_w[:, :-2]) / dk**2
                res.append(np.sqrt(config.lambda_k) * d2k.ravel())
            if config.lambda_tau > 0 and n >= 3:
                d2t = _second_divided_difference(pillars, grid_w.T)
                res.append(np.sqrt(config.lambda_tau) * d2t.ravel())
        return np.concatenate(res)

    try:
        sol = least_squares(
            residuals,
            x0,
            loss=config.loss,
            f_scale=config.huber_delta,
            method="trf",
            jac="3-point",
            ftol=config.tol,
            xtol=config.tol,
            gtol=config.tol,
            max_nfev=config.max_iter,
        )
    except (ValueError, FloatingPointError) as exc:
        raise CalibrationError(f"optimizer failed: {exc}", best=None) from exc

    theta, phi, rho = _unpack(sol.x, n)
    surface = SsviSurface(pillars, theta, phi, rho)
    report = check_no_arbitrage(surface)
    result = CalibrationResult(surface, report, flags, float(sol.cost), int(sol.nfev))
    if sol.status == 0:
        raise CalibrationError("optimizer hit max_iter without converging", best=result)
    if not report.ok:
        raise CalibrationError(f"calibrated surface has {len(report)} arbitrage violations", best=result)
    return result


class SsviCalibrator(RegressorMixin, BaseEstimator):
    """Estimator wrapper: ``X`` holds (k, tau) rows, ``y`` holds implied vols."""

    def __init__(self, loss="huber", huber_delta=0.005, lambda_k=1e-8, lambda_tau=1e-8, max_iter=2000):
        self.loss = loss
        self.huber_delta = huber_delta
        self.lambda_k = lambda_k
        self.lambda_tau = lambda_tau
        self.max_iter = max_iter

    def fit(self, X, y, sample_weight=None):
        X = as_finite_array(X, "X", ndim=2)
        y = as_finite_array(y, "y", ndim=1)
        if X.shape[1] != 2 or X.shape[0] != y.shape[0]:
            raise InputError("X must be (n, 2) of (k, tau) matching y")
        w = np.ones(len(y)) if sample_weight is None else as_finite_array(sample_weight, "sample_weight")
        cfg = CalibConfig(
            loss=self.loss,
            huber_delta=self.huber_delta,
            lambda_k=self.lambda_k,
            lambda_tau=self.lambda_tau,
            max_iter=self.max_iter,
        )
        result = calibrate_ssvi(np.column_stack([X, y, w]), cfg)
        self.surface_ = result.surface
        self.report_ = result.report
        self.flags_ = result.flags
        return self

    def predict(self, X):
        check_is_fitted(self, "surface_")
        X = as_finite_array(X, "X", ndim=2)
        return self.surface_.implied_vol(X[:, 0], X[:, 1])
