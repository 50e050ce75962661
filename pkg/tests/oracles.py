"""Independent reference computations used by the property and acceptance tests."""

import itertools

import numpy as np

from tailsafe.safety import BarrierSpec, SafetyParams, SafetyState, check_invariance_margin, eta_b_star, filter_step


def _eq_projection(H, q, A_act, b_act):
    """min 1/2 u'Hu + q'u  s.t. A_act u = b_act; returns (u, multipliers) or None."""
    m, k = H.shape[0], A_act.shape[0]
    K = np.block([[H, -A_act.T], [A_act, np.zeros((k, k))]])
    try:
        sol = np.linalg.solve(K, np.concatenate([-q, b_act]))
    except np.linalg.LinAlgError:
        return None
    return sol[:m], sol[m:]


def enumerate_projection(H, c, u_nom, A, b, tol=1e-9):
    """Exact minimizer of 1/2|u-u_nom|_H^2 + c'u over Au >= b by active-set enumeration."""
    H = np.asarray(H, float)
    q = c - H @ u_nom
    m = H.shape[0]
    best, best_val = None, np.inf
    rows = [i for i in range(A.shape[0]) if np.isfinite(b[i])]
    for k in range(0, min(m, len(rows)) + 1):
        for act in itertools.combinations(rows, k):
            act = list(act)
            out = _eq_projection(H, q, A[act], b[act])
            if out is None:
                continue
            u, lam = out
            if np.any(A @ u - b < -tol * (1 + np.abs(b))) or np.any(lam < -tol):
                continue
            val = 0.5 * u @ H @ u + q @ u
            if val < best_val:
                best, best_val = u, val
    return best


def grid_projection(H, c, u_nom, A, b, lo, hi, n_grid=None, n_refine=30, tol=1e-9):
    """Brute-force projection: dense grid search with zoom refinement, then KKT verification.

    Rows nearly tight at the grid point give candidate active sets; the
    equality-constrained projection on a candidate is accepted only if it passes
    the KKT checks. The band of "nearly tight" widens until one passes.
    """
    H = np.asarray(H, float)
    q = c - H @ u_nom
    m = H.shape[0]
    n_grid = n_grid or (41 if m <= 2 else 17)
    obj = lambda U: 0.5 * np.einsum("ni,ij,nj->n", U, H, U) + U @ q  # noqa: E731
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    best = None
    for _ in range(n_refine):
        axes = [np.linspace(center[i] - half[i], center[i] + half[i], n_grid) for i in range(m)]
        U = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, m)
        feas = np.all(U @ A.T - b >= -1e-12, axis=1)
        if not feas.any():
            half = half * 1.5
            continue
        Uf = U[feas]
        cand = Uf[np.argmin(obj(Uf))]
        if best is None or obj(cand[None])[0] <= obj(best[None])[0]:
            best = cand
        center = best
        half = np.maximum(half * 0.25, 1e-12)
    if best is None:
        return None
    res = A @ best - b
    scale = np.linalg.norm(A, axis=1)
    # widen the "near" band until some candidate active set passes the KKT test;
    # for SPD H any KKT point is the unique minimizer
    tried = set()
    for band in (1e-6, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, np.inf):
        near = [i for i in range(A.shape[0]) if np.isfinite(b[i]) and res[i] <= band * (1 + scale[i])]
        for k in range(min(len(near), m) + 1):
            for act in itertools.combinations(near, k):
                if act in tried:
                    continue
                tried.add(act)
                act = list(act)
                out = _eq_projection(H, q, A[act], b[act])
                if out is None:
                    continue
                u, lam = out
                stat = H @ u + q - A[act].T @ lam
                ok = np.all(A @ u - b >= -tol * (1 + np.abs(b))) and np.all(lam >= -tol)
                if ok and np.max(np.abs(stat), initial=0) < 1e-8:
                    return u
    return best


def random_polyhedral_qp(rng, m=None):
    """Random feasible problem: SPD H, friction c, box plus a few random halfspaces."""
    m = int(rng.integers(1, 4)) if m is None else m
    G = rng.normal(size=(m, m))
    H = G @ G.T + 0.3 * np.eye(m)
    c = rng.normal(scale=0.5, size=m)
    u_nom = rng.normal(scale=2.0, size=m)
    interior = rng.uniform(-0.5, 0.5, size=m)
    n_half = int(rng.integers(0, 4))
    rows = rng.normal(size=(n_half, m))
    rhs = rows @ interior - rng.uniform(0.05, 1.0, size=n_half)
    return H, c, u_nom, rows, rhs


def invariance_rollout(seed, n_steps=15, w_bar=0.05):
    """Linear system with affine barriers and an adversarial bounded disturbance.

    Returns (violations, clean_steps): steps that solved optimally with zero
    slack and still left some barrier negative, and the count of such clean steps.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    A = np.eye(n) + 0.1 * rng.normal(size=(n, n))
    B = 0.5 * np.eye(n) + 0.1 * rng.normal(size=(n, n))
    n_bar = int(rng.integers(1, 3))
    a = rng.normal(size=(n_bar, n))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    off = rng.uniform(0.3, 1.5, size=n_bar)
    h = lambda x: off - a @ x  # noqa: E731
    eps = np.array([check_invariance_margin(None, np.linalg.norm(ai), w_bar) for ai in a])
    params = SafetyParams(H=np.eye(n), kappa=2.0, dt=0.1, u_min=-3.0, u_max=3.0, r_max=2.0)
    x = np.zeros(n)
    u_prev = np.zeros(n)
    violations = clean = 0
    for _ in range(n_steps):
        fx = A @ x
        bars = [
            BarrierSpec.affine(f"b{i}", h(x)[i], off[i] - a[i] @ fx, -B.T @ a[i], eps=eps[i]) for i in range(n_bar)
        ]
        # nominal pushes toward the boundary of a random barrier
        k = int(rng.integers(n_bar))
        u_nom = np.linalg.lstsq(B, a[k], rcond=None)[0] * rng.uniform(0.5, 3.0) + 0.3 * rng.normal(size=n)
        out = filter_step(None, u_nom, u_prev, bars, params)
        u = out.u_safe
        x_pred = fx + B @ u
        # adversary: the worst unit direction for the barrier closest to zero
        j = int(np.argmin(h(x_pred)))
        w = w_bar * a[j]
        x_next = x_pred + w
        if out.record.solver_status == "optimal" and out.record.slack_sum == 0:
            clean += 1
            if np.all(h(x) >= 0) and np.any(h(x_next) < 0):
                violations += 1
        x, u_prev = x_next, u
    return violations, clean


class PersistenceSystem:
    """Smooth two-dimensional dynamics with exposure e(x,u) = A(x)u - d(x) and one CBF."""

    n = 2
    f_gain, g_gain = 0.01, 0.02
    A_lip, d_gain = 0.1, 0.5
    u_bound = 1.0

    def f(self, x):
        return x + self.f_gain * np.tanh(x)

    def g(self, x):
        return self.g_gain * np.eye(self.n)

    def A(self, x):
        return np.eye(self.n) + self.A_lip * np.diag(np.sin(x))

    def d(self, x):
        return self.d_gain * x

    def state(self, x):
        return SafetyState(self.A(x), self.d(x))

    def constants(self, u_norm, w_bar):
        """Local constants: L_e^x, L_x and the drift bound Delta_e."""
        U_max = self.u_bound * np.sqrt(self.n)
        L_ex = self.A_lip * U_max + self.d_gain
        L_x = max(self.f_gain, self.g_gain)
        drift = L_x * (u_norm + 1) + w_bar
        return L_ex, drift, L_ex * drift

    def barrier(self, x, a, off, eps, kappa_dt):
        fx = self.f(x)
        return BarrierSpec.affine("cbf", off - a @ x, off - a @ fx, -self.g(x).T @ a, kappa=kappa_dt, eps=eps)


def persistence_trial(seed, w_bar=0.005, max_tries=50):
    """One persistence trial under NTB and rate shrinkage; returns (ok, status, slack) at t+1 or None if hypotheses never held."""
    sys_ = PersistenceSystem()
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(2, 2))
    M = G @ G.T + 0.5 * np.eye(2)
    M /= np.linalg.eigvalsh(M)[-1]
    a = rng.normal(size=2)
    a /= np.linalg.norm(a)
    kappa_dt = 0.2
    for _ in range(max_tries):
        x = rng.uniform(-1, 1, size=2)
        u_prev = rng.uniform(-0.3, 0.3, size=2)
        u_nom = rng.normal(scale=0.6, size=2)
        b_max, r_max = 1.0, 0.8
        off = a @ x + rng.uniform(0.5, 1.5)
        # CBF margin large enough for the drift residual to stay positive
        _, drift, _ = sys_.constants(sys_.u_bound * np.sqrt(2), w_bar)
        # C(x,u) = h(f(x)+g u) - (1-kappa dt) h(x) has x-gradient a'((1-kappa dt) I - f'(x)); g is constant
        L_c = kappa_dt + sys_.f_gain
        eps = 2.0 * L_c * drift
        params = SafetyParams(
            H=np.eye(2), M=M, b_max=b_max, u_min=-sys_.u_bound, u_max=sys_.u_bound, r_max=r_max,
            kappa=1.0, dt=kappa_dt, eta_b=0.5, eta_r=0.5, ttx_threshold=1.0,
        )
        bar = sys_.barrier(x, a, off, eps, 1.0)
        out = filter_step(sys_.state(x), u_nom, u_prev, [bar], params, time_to_expiry=10.0)
        if out.record.solver_status != "optimal" or out.record.slack_sum > 0:
            continue
        u_t = out.u_safe
        e_t = sys_.A(x) @ u_t - sys_.d(x)
        delta_b = b_max - e_t @ M @ e_t
        delta_r = r_max - np.linalg.norm(u_t - u_prev)
        if delta_b <= 0 or delta_r <= 0:
            continue
        _, _, delta_e = sys_.constants(np.linalg.norm(u_t), w_bar)
        star = eta_b_star(M, b_max, delta_b, delta_e)
        if star >= 1:
            continue
        direction = rng.normal(size=2)
        w = w_bar * direction / np.linalg.norm(direction)
        x1 = sys_.f(x) + sys_.g(x) @ u_t + w
        shrunk_params = SafetyParams(
            H=np.eye(2), M=M, b_max=b_max, u_min=-sys_.u_bound, u_max=sys_.u_bound, r_max=r_max,
            kappa=1.0, dt=kappa_dt, eta_b=0.5 * (star + 1), eta_r=0.5, ttx_threshold=1.0,
        )
        bar1 = sys_.barrier(x1, a, off, eps, 1.0)
        u_nom1 = rng.normal(scale=0.6, size=2)
        out1 = filter_step(sys_.state(x1), u_nom1, u_t, [bar1], shrunk_params, time_to_expiry=0.5)
        rec = out1.record
        return rec.solver_status == "optimal" and rec.slack_sum == 0, rec.solver_status, rec.slack_sum
    return None
