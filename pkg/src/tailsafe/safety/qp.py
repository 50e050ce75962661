"""Dense convex QP solver by operator splitting (ADMM) with scaling and polishing.

Solves  min 1/2 x'Px + q'x  s.t.  l <= Ax <= u  for small dense problems.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_INF = 1e20


@dataclass
class QpSettings:
    eps_abs: float = 1e-7
    eps_rel: float = 1e-7
    kkt_tol: float = 1e-6
    eps_infeas: float = 1e-7
    max_iter: int = 10000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    adaptive_rho_interval: int = 25
    scaling_iter: int = 10
    polish: bool = True
    polish_refine: int = 5
    early_polish: bool = True
    check_interval: int = 5


@dataclass
class DenseResult:
    x: np.ndarray
    y: np.ndarray  # OSQP sign: y < 0 on active lower bounds
    status: str
    iterations: int
    polished: bool
    kkt: dict
    solve_time: float


def _ruiz(P, A, iters):
    n, m = P.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, As = P.copy(), A.copy()
    for _ in range(iters):
        col = np.max(np.abs(np.vstack([Ps, As])), axis=0) if m else np.max(np.abs(Ps), axis=0)
        d = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
        if m:
            row = np.max(np.abs(As), axis=1)
            e = 1.0 / np.sqrt(np.clip(row, 1e-4, 1e4))
        else:
            e = np.ones(0)
        Ps = d[:, None] * Ps * d[None, :]
        As = e[:, None] * As * d[None, :]
        D *= d
        E *= e
    return D, E, Ps, As


def kkt_residuals(P, q, A, l, u, x, y):
    """Unscaled KKT residuals for l <= Ax <= u with OSQP dual sign convention."""
    ax = A @ x
    stat = P @ x + q + A.T @ y
    lo_viol = np.where(l > -_INF, l - ax, 0.0)
    hi_viol = np.where(u < _INF, ax - u, 0.0)
    prim = float(max(np.max(lo_viol, initial=0.0), np.max(hi_viol, initial=0.0), 0.0))
    # y_i < 0 only allowed on finite lower bounds, y_i > 0 only on finite upper bounds
    y_neg = np.where(l > -_INF, 0.0, np.maximum(-y, 0.0))
    y_pos = np.where(u < _INF, 0.0, np.maximum(y, 0.0))
    sign = float(max(np.max(y_neg, initial=0.0), np.max(y_pos, initial=0.0)))
    gap_lo = np.where(l > -_INF, np.abs(ax - l), 0.0)
    gap_hi = np.where(u < _INF, np.abs(u - ax), 0.0)
    # multipliers on unbounded sides are already charged to dual_sign
    comp = np.where(y < 0, -y * gap_lo, y * gap_hi)
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "primal": prim,
        "dual_sign": sign,
        "complementarity": float(np.max(comp, initial=0.0)),
    }


def _kkt_ok(res, q_scale, tol):
    return (
        res["stationarity"] <= tol * (1.0 + q_scale)
        and res["primal"] <= tol
        and res["dual_sign"] <= tol
        and res["complementarity"] <= tol
    )


def _polish(P, q, A, l, u, x, y, refine):
    """Solve the reduced KKT system on the guessed active set."""
    ax = A @ x
    lower = (l > -_INF) & ((ax - l) < -y)
    upper = (u < _INF) & ((u - ax) < y) & ~lower
    act = lower | upper
    n = P.shape[0]
    Aa = A[act]
    rhs_b = np.where(lower, l, u)[act]
    k = Aa.shape[0]
    delta = 1e-7
    K = np.block([[P, Aa.T], [Aa, np.zeros((k, k))]])
    Kreg = K + np.diag(np.concatenate([np.full(n, delta), np.full(k, -delta)]))
    rhs = np.concatenate([-q, rhs_b])
    try:
        lu = np.linalg.inv(Kreg)
    except np.linalg.LinAlgError:
        return None
    sol = lu @ rhs
    for _ in range(refine):
        sol = sol + lu @ (rhs - K @ sol)
    xp = sol[:n]
    yp = np.zeros(A.shape[0])
    yp[act] = sol[n:]
    if not np.all(np.isfinite(sol)):
        return None
    return xp, yp


def solve_dense_qp(P, q, A, l, u, settings=None, x0=None, y0=None):
    settings = settings or QpSettings()
    t0 = time.perf_counter()
    P = np.asarray(P, float)
    q = np.asarray(q, float)
    A = np.asarray(A, float).reshape(-1, P.shape[0])
    l = np.clip(np.asarray(l, float), -_INF, _INF)
    u = np.clip(np.asarray(u, float), -_INF, _INF)
    n, m = P.shape[0], A.shape[0]
    q_scale = float(np.max(np.abs(q), initial=0.0))

    D, E, Ps, As = _ruiz(P, A, settings.scaling_iter)
    # cost scaling from the quadratic part only; huge slack penalties would otherwise dominate
    pnorm = np.mean(np.max(np.abs(Ps), axis=0)) if n else 1.0
    c = 1.0 / np.clip(pnorm, 1e-4, 1e4)
    Ps = c * Ps
    qs = c * D * q
    ls = np.where(l > -_INF, E * l, -_INF)
    us = np.where(u < _INF, E * u, _INF)

    x = np.zeros(n) if x0 is None else np.asarray(x0, float) / D
    z = As @ x if m else np.zeros(0)
    z = np.clip(z, ls, us)
    y = np.zeros(m) if y0 is None else c * np.asarray(y0, float) / E

    rho = settings.rho
    sigma = settings.sigma
    alpha = settings.alpha

    def factor(rho_val):
        # tiny dense systems: an explicit inverse from the Cholesky factor is cheapest per iteration
        return cho_solve(cho_factor(Ps + sigma * np.eye(n) + rho_val * As.T @ As), np.eye(n))

    fac = factor(rho)
    status = "max_iter"
    best = (x.copy(), y.copy())
    it = 0
    eps_abs, eps_rel = settings.eps_abs, settings.eps_rel
    polished = False
    kkt = None
    for it in range(1, settings.max_iter + 1):
        rhs = sigma * x - qs + As.T @ (rho * z - y)
        xt = fac @ rhs
        zt = As @ xt
        x_new = alpha * xt + (1 - alpha) * x
        z_relax = alpha * zt + (1 - alpha) * z
        z_new = np.clip(z_relax + y / rho, ls, us)
        y_new = y + rho * (z_relax - z_new)
        dy = y_new - y
        x, z, y = x_new, z_new, y_new

        if it % settings.check_interval and it != settings.max_iter:
            continue
        xu = D * x
        yu = E * y / c
        ax = A @ xu
        zu = z / E if m else z
        r_prim = float(np.max(np.abs(ax - zu), initial=0.0))
        r_dual = float(np.max(np.abs(P @ xu + q + A.T @ yu), initial=0.0))
        eps_p = eps_abs + eps_rel * max(np.max(np.abs(ax), initial=0.0), np.max(np.abs(zu), initial=0.0))
        eps_d = eps_abs + eps_rel * max(
            np.max(np.abs(P @ xu), initial=0.0), np.max(np.abs(A.T @ yu), initial=0.0), q_scale
        )
        best = (xu, yu)
        if r_prim <= eps_p and r_dual <= eps_d:
            kkt = kkt_residuals(P, q, A, l, u, xu, yu)
            if settings.polish:
                pol = _polish(P, q, A, l, u, xu, yu, settings.polish_refine)
                if pol is not None:
                    kp = kkt_residuals(P, q, A, l, u, *pol)
                    if _kkt_ok(kp, q_scale, settings.kkt_tol):
                        best, kkt, polished = pol, kp, True
            if polished or _kkt_ok(kkt, q_scale, settings.kkt_tol):
                status = "optimal"
                break
            eps_abs, eps_rel = eps_abs * 0.01, eps_rel * 0.01
        elif settings.polish and settings.early_polish and it >= 2 * settings.check_interval:
            # the active set usually settles long before the residuals do
            pol = _polish(P, q, A, l, u, xu, yu, settings.polish_refine)
            if pol is not None:
                kp = kkt_residuals(P, q, A, l, u, *pol)
                if _kkt_ok(kp, q_scale, settings.kkt_tol):
                    best, kkt, polished, status = pol, kp, True, "optimal"
                    break
        # primal infeasibility certificate
        if m:
            dyu = E * dy
            norm = np.max(np.abs(dyu))
            if norm > 1e-30:
                at = np.max(np.abs(A.T @ dyu))
                pos = np.maximum(dyu, 0.0)
                neg = np.minimum(dyu, 0.0)
                unbounded_use = np.any((u >= _INF) & (pos > settings.eps_infeas * norm)) or np.any(
                    (l <= -_INF) & (neg < -settings.eps_infeas * norm)
                )
                if not unbounded_use:
                    support = np.sum(np.where(u < _INF, u * pos, 0.0)) + np.sum(np.where(l > -_INF, l * neg, 0.0))
                    if at <= settings.eps_infeas * norm and support < -settings.eps_infeas * norm:
                        status = "infeasible"
                        break
        if settings.adaptive_rho_interval and it % settings.adaptive_rho_interval == 0 and m:
            ps = np.max(np.abs(As @ x - z), initial=0.0) / max(np.max(np.abs(As @ x), initial=0.0), np.max(np.abs(z), initial=0.0), 1e-12)
            ds = np.max(np.abs(Ps @ x + qs + As.T @ y), initial=0.0) / max(
                np.max(np.abs(Ps @ x), initial=0.0), np.max(np.abs(As.T @ y), initial=0.0), np.max(np.abs(qs), initial=0.0), 1e-12
            )
            new_rho = float(np.clip(rho * np.sqrt(ps / max(ds, 1e-12)), 1e-6, 1e6))
            if new_rho > 5 * rho or new_rho < 0.2 * rho:
                rho = new_rho
                fac = factor(rho)

    if status == "max_iter" and settings.polish:
        pol = _polish(P, q, A, l, u, *best, settings.polish_refine)
        if pol is not None:
            kp = kkt_residuals(P, q, A, l, u, *pol)
            if _kkt_ok(kp, q_scale, settings.kkt_tol):
                best, kkt, polished, status = pol, kp, True, "optimal"
    if kkt is None:
        kkt = kkt_residuals(P, q, A, l, u, *best)
    return DenseResult(best[0], best[1], status, it, polished, kkt, time.perf_counter() - t0)
