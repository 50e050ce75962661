"""Alpha, entropy and KL coefficient schedules."""

import math

import numpy as np

from ..exceptions import InputError


def alpha_schedule(step, total_steps, alpha_start=0.10, alpha_target=0.025):
    """Cosine interpolation from alpha_start down to alpha_target."""
    if total_steps <= 0:
        return float(alpha_target) if step > 0 else float(alpha_start)
    if not 0 <= step <= total_steps:
        raise InputError("need 0 <= step <= total_steps")
    return float(alpha_target + (alpha_start - alpha_target) * 0.5 * (1 + math.cos(math.pi * step / total_steps)))


def entropy_schedule(step, total_steps, start=1e-3, end=0.0):
    """Linear decay of the entropy coefficient."""
    frac = 1.0 if total_steps <= 0 else min(max(step / total_steps, 0.0), 1.0)
    return float(start + (end - start) * frac)


def kl_coef_schedule(alpha, alpha_start=0.10, alpha_target=0.025, lam_start=0.1, lam_end=1.0, n_grid=4):
    """KL coefficient stepped up each time alpha crosses a point of an even tightening grid."""
    if alpha_start == alpha_target:
        return float(lam_end)
    frac = (alpha_start - alpha) / (alpha_start - alpha_target)
    level = math.floor(np.clip(frac, 0.0, 1.0) * n_grid + 1e-12) / n_grid
    return float(lam_start + (lam_end - lam_start) * level)
