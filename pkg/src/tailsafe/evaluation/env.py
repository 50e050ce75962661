"""Hedging environments: a two-leg equity + volatility-index book and a 1-D cost toy task.

Both expose the same small interface used by the episode runner:
``reset()``, ``features()``, ``safety_inputs()``, ``step(u)`` and ``done``.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..exceptions import ConfigError
from ..execution import Account, BookState, ImpactParams, account_step, exec_price
from ..market import LocalVolGrid, SsviSurface, VolFactor, black_call, extract_local_vol, simulate_paths, vix_from_surface
from ..safety import BarrierSpec, SafetyParams, SafetyState

TRADING_DAY = 1.0 / 252.0
EXPIRY_MULT = {"short": 1.0, "medium": 2.0, "long": 4.0}
CORR_TAGS = {"normal": -0.7, "decorrelated": 0.0, "stressed": -0.95}


def default_surface():
    """Equity-like SSVI surface: 20% ATM vol, negative skew, constant curvature."""
    mats = np.array([0.02, 0.1, 0.25, 0.5, 1.0])
    theta = 0.04 * mats
    return SsviSurface(mats, theta, np.full(5, 3.0), np.full(5, -0.5))


def total_variance(surface, k, tau):
    """w(k, tau), extended proportionally in tau outside the pillar range."""
    lo, hi = surface.maturities[0], surface.maturities[-1]
    t = float(np.clip(tau, lo, hi))
    return surface.total_variance(k, t) * (tau / t)


def _surface_key(surface):
    return tuple(np.concatenate([surface.maturities, surface.theta, surface.phi, surface.rho]).round(14))


@lru_cache(maxsize=64)
def _vix_table(key):
    n = len(key) // 4
    surf = SsviSurface(*(np.array(key[i * n : (i + 1) * n]) for i in range(4)))
    levels = np.geomspace(0.05, 20.0, 97)
    vix = np.array([vix_from_surface(surf.scaled(level=lv), 100.0, n_strikes=401) for lv in levels])
    return np.log(levels), vix


def vix_proxy(surface, level):
    """Index level for the surface with theta scaled by ``level`` (log-linear table)."""
    log_l, vix = _vix_table(_surface_key(surface))
    return float(np.interp(np.log(level), log_l, vix))


@lru_cache(maxsize=64)
def _local_vol(key, s0, horizon):
    n = len(key) // 4
    surf = SsviSurface(*(np.array(key[i * n : (i + 1) * n]) for i in range(4)))
    lo = surf.maturities[0]
    tg = np.linspace(lo, max(lo * 2, horizon * 1.01, surf.maturities[1]), 6)
    kg = s0 * np.exp(np.linspace(-0.6, 0.6, 31))
    return extract_local_vol(surf, tg, kg, spot=s0)


def local_vol_for(surface, s0, horizon):
    return _local_vol(_surface_key(surface), float(s0), float(horizon))


@dataclass(frozen=True)
class Scenario:
    surface: SsviSurface
    corr_regime: float = CORR_TAGS["normal"]
    impact: ImpactParams = None
    expiry_bucket: str = "medium"
    seed: int = 0
    label: str = "ID"
    index: int = 0
    local_vol: LocalVolGrid = None  # overrides the Dupire grid (e.g. a zero-vol market)

    @property
    def cell(self):
        return self.label.split("|", 1)[0]


def default_impact():
    return ImpactParams(np.array([0.002, 0.01]), np.outer(0.001 * np.exp(-0.5 * np.arange(16)), [1.0, 2.0]))


@dataclass
class HedgeConfig:
    s0: float = 100.0
    n_steps: int = 20
    dt: float = TRADING_DAY
    notional: float = 10.0  # short calls
    strike_mult: float = 1.0
    spread: tuple = (0.02, 0.05)
    vol_of_vol: float = 0.5
    factor_kappa: float = 2.0
    u_max: tuple = (3.0, 3.0)
    r_max: float = 4.0
    b_max: float = 4.0
    long_cap: float = 25.0  # equity position cap
    short_cap: float = 5.0  # largest equity short
    vix_cap: float = 10.0  # |vix-leg position| cap
    kappa: float = 0.5
    eps_margin: float = 0.0
    ttx_threshold: float = 2 * TRADING_DAY
    extreme_level: float = 2.25
    gate: bool = True
    delta_adv: float = 0.0
    bump: float = 1e-3

    def safety_params(self, vix_sens=1.0):
        M = np.diag([1.0, 1.0 / vix_sens**2])
        return SafetyParams(
            H=np.diag([1.0, 1.0]), M=M, b_max=self.b_max, u_min=-np.asarray(self.u_max), u_max=np.asarray(self.u_max),
            r_max=self.r_max, kappa=self.kappa, dt=1.0, eps_margin=self.eps_margin, ttx_threshold=self.ttx_threshold,
            delta_adv=self.delta_adv,
        )


class HedgingEnv:
    """Short ``notional`` calls hedged with the equity and a volatility-index future proxy.

    Exposure error e(u) = A (q + u) - target with A = diag(1, dV/dlevel) and
    target = notional * (dC/dS, dC/dlevel), all by central bumps. The vol
    factor of the path simulator scales implied variance by factor^2.
    """

    m = 2
    d = 8

    def __init__(self, scenario, config=None):
        self.scenario = scenario
        self.cfg = config or HedgeConfig()
        if self.cfg.n_steps < 1:
            raise ConfigError("n_steps must be >= 1", "evaluation.n_steps")
        self.impact = scenario.impact or default_impact()
        if self.impact.eta.size not in (1, 2) or self.impact.kernel.shape[1] not in (1, 2):
            raise ConfigError("impact parameters must cover both legs", "exec.impact")
        self.horizon = self.cfg.n_steps * self.cfg.dt
        self.maturity = self.horizon * EXPIRY_MULT[scenario.expiry_bucket]
        self.strike = self.cfg.s0 * self.cfg.strike_mult
        self.reset()

    # market
    def _simulate(self):
        cfg, sc = self.cfg, self.scenario
        lv = sc.local_vol or local_vol_for(sc.surface, cfg.s0, self.horizon)
        factor = VolFactor(kappa=cfg.factor_kappa, vol_of_vol=cfg.vol_of_vol, corr=sc.corr_regime)
        ps = simulate_paths(lv, cfg.s0, 0.0, 1, cfg.n_steps, cfg.dt, sc.seed, vol_factor=factor)
        return ps.paths[0], ps.vol_factor[0] ** 2

    def option_value(self, s, level, ttx):
        if ttx <= 0:
            return max(s - self.strike, 0.0)
        w = level * total_variance(self.scenario.surface, np.log(self.strike / s), ttx)
        return float(black_call(s, self.strike, w))

    def vix(self, level):
        return vix_proxy(self.scenario.surface, level)

    def _greeks(self, t):
        s, lv, ttx = self.spot[t], self.level[t], self.maturity - t * self.cfg.dt
        hs, hl = self.cfg.bump * s, self.cfg.bump * lv
        dC_ds = (self.option_value(s + hs, lv, ttx) - self.option_value(s - hs, lv, ttx)) / (2 * hs)
        dC_dl = (self.option_value(s, lv + hl, ttx) - self.option_value(s, lv - hl, ttx)) / (2 * hl)
        dV_dl = (self.vix(lv + hl) - self.vix(lv - hl)) / (2 * hl)
        return dC_ds, dC_dl, max(dV_dl, 1e-8)

    def reset(self):
        self.spot, self.level = self._simulate()
        self.t = 0
        dC_ds, dC_dl, dV_dl = self._greeks(0)
        self.vix_sens0 = dV_dl
        q0 = np.array([self.cfg.notional * dC_ds, self.cfg.notional * dC_dl / dV_dl])
        self.account = Account.flat(2, q0)
        self.book = BookState.create(self._mids(0), self.cfg.spread)
        self.option_pnl = 0.0
        self.params = self.cfg.safety_params(dV_dl)
        return self.features()

    def _mids(self, t):
        return np.array([self.spot[t], self.vix(self.level[t])])

    @property
    def done(self):
        return self.t >= self.cfg.n_steps

    @property
    def ttx(self):
        return max(self.maturity - self.t * self.cfg.dt, 0.0)

    def exposure(self):
        dC_ds, dC_dl, dV_dl = self._greeks(self.t)
        A = np.diag([1.0, dV_dl])
        target = self.cfg.notional * np.array([dC_ds, dC_dl])
        return A, target - A @ self.account.inventory

    def features(self):
        A, d = self.exposure()
        q = self.account.inventory
        scale = self.cfg.notional if self.cfg.notional > 0 else 1.0  # inert books have no liability to normalize by
        return np.array(
            [
                self.t / self.cfg.n_steps,
                np.log(self.spot[self.t] / self.strike) * 10,
                np.sqrt(self.level[self.t]) - 1.0,
                q[0] / scale,
                q[1] / scale,
                d[0] / scale,
                d[1] / (scale * A[1, 1]),
                np.sqrt(self.ttx / self.maturity),
            ]
        )

    def barriers(self):
        q = self.account.inventory
        c = self.cfg
        e0, e1 = np.eye(2)
        return [
            BarrierSpec.affine("leverage", c.long_cap - q[0], c.long_cap - q[0], -e0, rule="leverage"),
            BarrierSpec.affine("short_sale", c.short_cap + q[0], c.short_cap + q[0], e0, rule="short_sale"),
            BarrierSpec.affine("vix_long", c.vix_cap - q[1], c.vix_cap - q[1], -e1, rule="vix_position"),
            BarrierSpec.affine("vix_short", c.vix_cap + q[1], c.vix_cap + q[1], e1, rule="vix_position"),
        ]

    def safety_inputs(self):
        A, d = self.exposure()
        signals = None
        if self.cfg.gate:
            g = 2 * A.T @ self.params.M @ d  # -grad of the exposure error at u = 0
            nrm = np.linalg.norm(g)
            signals = (g / nrm if nrm > 1e-12 else np.zeros(2))[None, :]
        regime = "extreme" if self.level[self.t] > self.cfg.extreme_level else "normal"
        return SafetyState(A, d, signals), self.barriers(), self.ttx, regime

    def step(self, u):
        """Execute u, move the market one step; returns (step_loss, cost)."""
        u = np.asarray(u, float)
        t = self.t
        _, cost = exec_price(self.book, self.impact, u)
        after = self.book.advance(u, self.impact, mid=self._mids(t + 1))
        self.account = account_step(self.account, self.book, after, u, cost)
        self.book = after
        v0 = self.option_value(self.spot[t], self.level[t], self.maturity - t * self.cfg.dt)
        v1 = self.option_value(self.spot[t + 1], self.level[t + 1], self.maturity - (t + 1) * self.cfg.dt)
        d_opt = -self.cfg.notional * (v1 - v0)
        self.option_pnl += d_opt
        self.t = t + 1
        d_pnl = self.account.pnl_path[-1] - self.account.pnl_path[-2] + d_opt
        return -d_pnl, cost.total

    @property
    def pnl(self):
        return self.account.pnl + self.option_pnl


@dataclass
class ToyConfig:
    n_steps: int = 20
    sigma: float = 1.0
    spread: float = 1.0
    eta: float = 0.5
    u_max: float = 1.0
    r_max: float = 2.0


class ToyCostEnv:
    """One instrument, random-walk mid, costly trading and no liability: doing nothing is optimal."""

    m = 1
    d = 2

    def __init__(self, seed=0, config=None):
        self.cfg = config or ToyConfig()
        self.seed = seed
        self.impact = ImpactParams(np.array([self.cfg.eta]), np.zeros(1))
        self.params = SafetyParams(H=np.eye(1), u_min=-self.cfg.u_max, u_max=self.cfg.u_max, r_max=self.cfg.r_max)
        self.reset()

    def reset(self):
        rng = np.random.default_rng(self.seed)
        self.mids = 100.0 + np.concatenate([[0.0], np.cumsum(self.cfg.sigma * rng.standard_normal(self.cfg.n_steps))])
        self.t = 0
        self.account = Account.flat(1)
        self.book = BookState.create(self.mids[:1], self.cfg.spread)
        return self.features()

    @property
    def done(self):
        return self.t >= self.cfg.n_steps

    @property
    def ttx(self):
        return np.inf

    def features(self):
        return np.array([self.t / self.cfg.n_steps, self.account.inventory[0] / self.cfg.u_max])

    def safety_inputs(self):
        return SafetyState(), [], np.inf, "normal"

    def step(self, u):
        u = np.atleast_1d(np.asarray(u, float))
        _, cost = exec_price(self.book, self.impact, u)
        after = self.book.advance(u, self.impact, mid=self.mids[self.t + 1 : self.t + 2])
        self.account = account_step(self.account, self.book, after, u, cost)
        self.book = after
        self.t += 1
        return -(self.account.pnl_path[-1] - self.account.pnl_path[-2]), cost.total

    @property
    def pnl(self):
        return self.account.pnl
