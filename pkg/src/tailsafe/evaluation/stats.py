"""Performance ratios, paired bootstrap, BH-FDR, Vargha-Delaney A12 and ECDF tables."""

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import InputError
from ..tailrisk import var_es_empirical

REPORT_ALPHAS = (0.01, 0.025, 0.05)


def perf_ratios(pnl):
    """(sharpe, sortino, omega) with a zero benchmark; None marks an undefined ratio.

    Sharpe uses the sample standard deviation; Omega integrates the ECDF
    exactly, which equals E[(Pi)+] / E[(-Pi)+].
    """
    x = np.asarray(pnl, float).ravel()
    if x.size < 2:
        raise InputError("need at least two P&L samples")
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    sharpe = mean / sd if sd > 0 else None
    down = float(np.sqrt(np.mean(np.minimum(x, 0.0) ** 2)))
    sortino = mean / down if down > 0 else None
    up_area, down_area = _ecdf_areas(x, 0.0)
    omega = up_area / down_area if down_area > 0 else None
    return sharpe, sortino, omega


def _ecdf_areas(x, tau0):
    """int_{tau0}^inf (1 - F) and int_{-inf}^{tau0} F for the empirical CDF."""
    v = np.sort(x)
    n = v.size
    pts = np.concatenate([v, [tau0]])
    pts.sort()
    up = down = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        if hi <= lo:
            continue
        f = np.searchsorted(v, lo, side="right") / n  # F is constant on [lo, hi)
        if lo >= tau0:
            up += (1 - f) * (hi - lo)
        else:
            down += f * (hi - lo)
    return up, down


def _as_aligned(a, b):
    if isinstance(a, dict) or isinstance(b, dict):
        if not (isinstance(a, dict) and isinstance(b, dict)) or set(a) != set(b):
            raise InputError("pairing keys of a and b do not match")
        keys = sorted(a)
        return np.array([a[k] for k in keys], float), np.array([b[k] for k in keys], float), keys
    a, b = np.asarray(a, float).ravel(), np.asarray(b, float).ravel()
    if a.size != b.size:
        raise InputError("a and b must be index-aligned (equal length)")
    return a, b, None


def common_n(a, b):
    """Downsample two {(seed, path): value} maps to a common n per seed, pairing by path rank.

    Returns (a_values, b_values, strata).
    """
    by_a, by_b = defaultdict(list), defaultdict(list)
    for (s, p), v in sorted(a.items()):
        by_a[s].append(v)
    for (s, p), v in sorted(b.items()):
        by_b[s].append(v)
    xa, xb, strata = [], [], []
    for s in sorted(set(by_a) & set(by_b)):
        n = min(len(by_a[s]), len(by_b[s]))
        xa += by_a[s][:n]
        xb += by_b[s][:n]
        strata += [s] * n
    return np.array(xa, float), np.array(xb, float), np.array(strata)


def _apply(stat, data):
    try:
        return np.asarray(stat(data, axis=1), float)
    except TypeError:
        return np.array([stat(row) for row in data], float)


def paired_bootstrap_ci(a, b, statistic=np.mean, B_reps=2000, seed=0, strata=None, level=0.95):
    """Delta = stat(b) - stat(a) with a stratified paired percentile bootstrap.

    Each replicate resamples seeds (strata) with replacement, then paths
    within each drawn seed, applying the same indices to a and b.
    """
    if B_reps < 1000:
        raise InputError("B_reps must be >= 1000")
    a, b, keys = _as_aligned(a, b)
    n = a.size
    if n < 2:
        raise InputError("need at least two paired observations")
    if strata is None and keys is not None and all(isinstance(k, tuple) for k in keys):
        strata = [k[0] for k in keys]
    strata = np.zeros(n, int) if strata is None else np.asarray(strata)
    if strata.size != n:
        raise InputError("strata must align with the samples")
    rng = np.random.default_rng(seed)
    groups = [np.flatnonzero(strata == s) for s in np.unique(strata)]
    sizes = np.array([g.size for g in groups])
    S = len(groups)
    point = float(statistic(b) - statistic(a))
    if np.all(sizes == sizes[0]):
        table = np.stack(groups)  # (S, n_s)
        pick = rng.integers(S, size=(B_reps, S))
        within = rng.integers(sizes[0], size=(B_reps, S, sizes[0]))
        idx = table[pick[:, :, None], within].reshape(B_reps, -1)
        deltas = _apply(statistic, b[idx]) - _apply(statistic, a[idx])
    else:
        deltas = np.empty(B_reps)
        for r in range(B_reps):
            chosen = rng.integers(S, size=S)
            idx = np.concatenate([groups[c][rng.integers(sizes[c], size=sizes[c])] for c in chosen])
            deltas[r] = statistic(b[idx]) - statistic(a[idx])
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(deltas, [tail, 100 - tail])
    return point, float(lo), float(hi)


def bh_fdr(pvalues, q=0.05):
    """Benjamini-Hochberg step-up; returns (reject, p_adjusted) in input order."""
    p = np.asarray(pvalues, float).ravel()
    if np.any((p < 0) | (p > 1)):
        raise InputError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return np.zeros(0, bool), np.zeros(0)
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adj_sorted = np.minimum(np.minimum.accumulate(ranked[::-1])[::-1], 1.0)
    adj = np.empty(m)
    adj[order] = adj_sorted
    passing = np.flatnonzero(p[order] <= np.arange(1, m + 1) * q / m)
    reject = np.zeros(m, bool)
    if passing.size:
        reject[order[: passing[-1] + 1]] = True
    return reject, adj


def vargha_delaney_a12(a, b):
    """P(A > B) + 0.5 P(A = B) over all pairs."""
    a = np.asarray(a, float).ravel()
    b = np.sort(np.asarray(b, float).ravel())
    if a.size == 0 or b.size == 0:
        raise InputError("both samples must be nonempty")
    less = np.searchsorted(b, a, side="left")
    leq = np.searchsorted(b, a, side="right")
    return float((less.sum() + 0.5 * (leq - less).sum()) / (a.size * b.size))


@dataclass
class EcdfTable:
    rows: list  # (value, cumulative fraction)
    annotations: list = field(default_factory=list)  # (label, value, cumulative fraction)

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["value", "ecdf", "annotation"])
            for v, f in self.rows:
                w.writerow([repr(float(v)), repr(float(f)), ""])
            for label, v, f in self.annotations:
                w.writerow([repr(float(v)), repr(float(f)), label])


def ecdf_table(losses, alphas=REPORT_ALPHAS):
    """Right-continuous ECDF of the losses with VaR/ES rows for each tail probability alpha."""
    x = np.sort(np.asarray(losses, float).ravel())
    if x.size == 0:
        raise InputError("empty loss sample")
    vals, counts = np.unique(x, return_counts=True)
    cdf = np.cumsum(counts) / x.size
    rows = list(zip(vals.tolist(), cdf.tolist()))
    ann = []
    for a in alphas:
        if x.size < math.ceil(1.0 / a - 1e-9):
            continue
        var, es = var_es_empirical(x, 1.0 - a)
        for label, v in ((f"VaR_{a:g}", var), (f"ES_{a:g}", es)):
            ann.append((label, v, float(np.searchsorted(x, v, side="right") / x.size)))
    return EcdfTable(rows, ann)
