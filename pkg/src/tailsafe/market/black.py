"""Undiscounted Black prices on a forward, parameterized by total variance."""

import numpy as np
from scipy.special import ndtr


def black_call(forward, strike, total_var):
    """Undiscounted call price E[(F_T - K)+] for a lognormal forward with variance ``total_var``."""
    forward, strike, total_var = np.broadcast_arrays(
        np.asarray(forward, float), np.asarray(strike, float), np.asarray(total_var, float)
    )
    out = np.array(np.maximum(forward - strike, 0.0), dtype=float)
    pos = total_var > 0
    if np.any(pos):
        sd = np.sqrt(total_var[pos])
        f, k = forward[pos], strike[pos]
        d1 = (np.log(f / k) + 0.5 * total_var[pos]) / sd
        out[pos] = f * ndtr(d1) - k * ndtr(d1 - sd)
    return out if out.ndim else float(out)


def black_put(forward, strike, total_var):
    """Undiscounted put via parity: P = C - (F - K)."""
    call = black_call(forward, strike, total_var)
    return call - (np.asarray(forward, float) - np.asarray(strike, float))


def bs_delta(forward, strike, total_var):
    """Forward delta N(d1) of the undiscounted call."""
    forward, strike, total_var = np.broadcast_arrays(
        np.asarray(forward, float), np.asarray(strike, float), np.asarray(total_var, float)
    )
    sd = np.sqrt(np.maximum(total_var, 1e-300))
    d1 = (np.log(forward / strike) + 0.5 * total_var) / sd
    out = np.where(total_var > 0, ndtr(d1), (forward > strike).astype(float))
    return out if out.ndim else float(out)
