"""Surface-consistent 30-day volatility index by static replication."""

import numpy as np
from scipy.integrate import simpson

from ..exceptions import InputError
from .black import black_call, black_put

VIX_HORIZON = 30.0 / 365.0


def _power_tail(strike_a, price_a, strike_b, price_b, side):
    """Integral of price/K^2 beyond the outermost node under a power-law fit."""
    if price_a <= 0 or price_b <= 0:
        return 0.0
    slope = np.log(price_b / price_a) / np.log(strike_b / strike_a)
    if side == "put":
        # P(K) = P0 (K/K0)^a on (0, K0]; integrable iff a > 1
        return price_a / (strike_a * (slope - 1)) if slope > 1 else 0.0
    # C(K) = CN (K/KN)^(-b) on [KN, inf); integrable iff b > -1
    b = -slope
    return price_b / (strike_b * (b + 1)) if b > -1 else 0.0


def vix_from_surface(surface, forward, rate=0.0, horizon=VIX_HORIZON, strike_grid=None, tail_decay=True, n_strikes=801):
    """Volatility-index level in vol points (e.g. 20.0 for 20%).

    Parameters
    ----------
    surface : SsviSurface
    forward : float
        Forward level F for the horizon.
    rate : float
        Constant rate; prices are undiscounted so the e^{rT} factor cancels the
        discount that a quoted option price would carry.
    strike_grid : array, optional
        Must bracket F and span at least [F/3, 3F]. Default: ``n_strikes`` points.
    tail_decay : bool
        Add power-law tail mass beyond the outermost strikes.
    """
    if not forward > 0:
        raise InputError("forward must be positive")
    if strike_grid is None:
        strike_grid = np.linspace(forward / 3.0, 3.0 * forward, n_strikes)
    ks = np.asarray(strike_grid, float)
    if ks.ndim != 1 or ks.size < 3 or np.any(np.diff(ks) <= 0) or ks[0] <= 0:
        raise InputError("strike_grid must be positive and strictly increasing")
    if not ks[0] < forward < ks[-1]:
        raise InputError("strike_grid must bracket the forward")
    if ks[0] > forward / 3.0 * (1 + 1e-12) or ks[-1] < 3.0 * forward * (1 - 1e-12):
        raise InputError("strike_grid must span at least [F/3, 3F]")

    put_k = np.append(ks[ks < forward], forward)
    call_k = np.insert(ks[ks > forward], 0, forward)
    var_put = surface.total_variance(np.log(put_k / forward), horizon)
    var_call = surface.total_variance(np.log(call_k / forward), horizon)
    discount = np.exp(-rate * horizon)
    # quoted (discounted) OTM prices, then the e^{rT} factor
    puts = discount * black_put(forward, put_k, var_put)
    calls = discount * black_call(forward, call_k, var_call)
    put_int = np.maximum(puts / put_k**2, 0.0)
    call_int = np.maximum(calls / call_k**2, 0.0)
    total = simpson(put_int, x=put_k) + simpson(call_int, x=call_k)
    if tail_decay:
        total += _power_tail(put_k[0], puts[0], put_k[1], puts[1], "put")
        total += _power_tail(call_k[-2], calls[-2], call_k[-1], calls[-1], "call")
    vix2 = 2.0 * np.exp(rate * horizon) / horizon * total
    return 100.0 * float(np.sqrt(max(vix2, 0.0)))
