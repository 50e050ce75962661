"""Safety program data types, assembly of the CBF-QP rows and the solve wrapper."""

from dataclasses import dataclass, field, replace

import numpy as np

from .._validation import as_vector, check_spd
from ..exceptions import InputError
from .qp import QpSettings, solve_dense_qp

ACT_TOL = 1e-6


def _per_item(value, n, name):
    arr = np.broadcast_to(np.asarray(value, float), (n,)).astype(float)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class SafetyParams:
    """Weights and limits of the per-step safety program.

    ``u_min``/``u_max`` may be infinite; ``r_max`` and ``b_max`` may be ``inf`` to
    disable the rate cap or the band.
    """

    H: np.ndarray
    c: np.ndarray = None
    rho_slack: float = None
    kappa: float = 1.0
    dt: float = 1.0
    M: np.ndarray = None
    b_max: float = np.inf
    u_min: np.ndarray = -np.inf
    u_max: np.ndarray = np.inf
    r_max: float = np.inf
    delta_adv: float = 0.0
    eta_b: float = 0.5
    eta_r: float = 0.5
    eps_margin: float = 0.0
    ttx_threshold: float = 0.0
    shrunk: bool = False

    def __post_init__(self):
        H, lam_min = check_spd(self.H, "H")
        m = H.shape[0]
        lam_max = float(np.linalg.eigvalsh(H)[-1])
        c = np.zeros(m) if self.c is None else as_vector(self.c, "c", m)
        rho = 1e6 * lam_max if self.rho_slack is None else float(self.rho_slack)
        M = None
        if self.M is not None:
            M, _ = check_spd(self.M, "M")
        u_min = np.broadcast_to(np.asarray(self.u_min, float), (m,)).astype(float)
        u_max = np.broadcast_to(np.asarray(self.u_max, float), (m,)).astype(float)
        if np.any(np.isnan(u_min)) or np.any(np.isnan(u_max)) or np.any(u_min > u_max):
            raise InputError("need u_min <= u_max componentwise")
        if not (0 < self.eta_b < 1 and 0 < self.eta_r < 1):
            raise InputError("eta_b and eta_r must lie in (0, 1)")
        if not (self.r_max > 0 and self.b_max > 0 and self.dt > 0 and rho > 0):
            raise InputError("r_max, b_max, dt and rho_slack must be positive")
        if np.any(np.asarray(self.kappa) <= 0) or self.delta_adv < 0 or np.any(np.asarray(self.eps_margin) < 0):
            raise InputError("kappa must be > 0; delta_adv and eps_margin >= 0")
        for name, val in (("H", H), ("c", c), ("rho_slack", rho), ("M", M), ("u_min", u_min), ("u_max", u_max)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_lam_min_H", lam_min)

    @property
    def m(self):
        return self.H.shape[0]


@dataclass(frozen=True)
class BarrierSpec:
    """One discrete-time CBF row, linearized at ``anchor`` (default: u_nom).

    ``h_next_fn`` (optional) evaluates h(f(x)+g(x)u) exactly so that the filter
    can re-linearize and certify nonlinear barriers.
    """

    id: str
    h: float
    grad_u: np.ndarray
    h_next_at_anchor: float
    rule: str = None
    kappa: float = None
    eps: float = None
    h_next_fn: object = None
    anchor: np.ndarray = None
    affine_in_u: bool = False  # exact linear row: nothing to re-linearize or certify

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.grad_u, float))
        if not (np.isfinite(self.h) and np.isfinite(self.h_next_at_anchor) and np.all(np.isfinite(g))):
            raise InputError(f"barrier {self.id}: h and grad_u must be finite")
        object.__setattr__(self, "grad_u", g)

    @classmethod
    def affine(cls, id, h, h_next_at_zero, grad_u, rule=None, kappa=None, eps=None):
        """Barrier with h_next(u) = h_next_at_zero + grad_u . u exactly."""
        g = np.atleast_1d(np.asarray(grad_u, float))
        fn = lambda u: float(h_next_at_zero + g @ np.asarray(u, float))  # noqa: E731
        return cls(id, float(h), g, float(h_next_at_zero), rule, kappa, eps, fn, np.zeros_like(g), True)

    def relinearize(self, u0, step=1e-6):
        if self.h_next_fn is None or self.affine_in_u:
            return self
        u0 = np.asarray(u0, float)
        grad = np.empty_like(u0)
        for i in range(u0.size):
            e = np.zeros_like(u0)
            e[i] = step * (1 + abs(u0[i]))
            grad[i] = (self.h_next_fn(u0 + e) - self.h_next_fn(u0 - e)) / (2 * e[i])
        return replace(self, grad_u=grad, h_next_at_anchor=float(self.h_next_fn(u0)), anchor=u0.copy())


@dataclass(frozen=True)
class SafetyState:
    """State-dependent pieces: affine exposure error e(u) = A u - d and gate signals."""

    exposure_A: np.ndarray = None
    exposure_d: np.ndarray = None
    signals: np.ndarray = None  # (J, m)

    def exposure_error(self, u):
        return self.exposure_A @ np.asarray(u, float) - self.exposure_d


@dataclass
class QpProblem:
    H: np.ndarray
    c: np.ndarray
    rho_slack: float
    u_nom: np.ndarray
    u_prev: np.ndarray
    A: np.ndarray  # rows acting on u
    S: np.ndarray  # rows acting on slack
    b: np.ndarray  # row_i: A_i u + S_i zeta >= b_i
    tags: list
    ids: list
    names: list
    lin_point: np.ndarray
    params: SafetyParams = None
    state: SafetyState = None
    barriers: list = field(default_factory=list)

    @property
    def n_u(self):
        return self.A.shape[1]

    @property
    def n_slack(self):
        return self.S.shape[1]

    @property
    def n_rows(self):
        return self.A.shape[0]

    def residuals(self, u, slack=None):
        slack = np.zeros(self.n_slack) if slack is None else slack
        return self.A @ u + self.S @ slack - self.b

    def tightened(self, buffer):
        """Copy with every finite row bound raised by buffer * (1 + |b|)."""
        b = self.b.copy()
        fin = np.isfinite(b)
        b[fin] += buffer * (1 + np.abs(b[fin]))
        return replace(self, b=b)

    def shifted(self, row, delta):
        b = self.b.copy()
        b[row] += delta
        return replace(self, b=b)


@dataclass
class QpSolution:
    u: np.ndarray
    slack: np.ndarray
    duals: np.ndarray
    active_set: list
    status: str
    iterations: int
    solve_time: float
    kkt: dict = None

    def objective(self, problem):
        d = self.u - problem.u_nom
        return 0.5 * d @ problem.H @ d + problem.c @ self.u + problem.rho_slack * np.sum(self.slack)


def assemble_qp(state, u_nom, u_prev, barriers, params, lin_point=None):
    """Build the one-sided rows A u + S zeta >= b in the order CBF, NTB, BOX, RATE, GATE."""
    m = params.m
    u_nom = as_vector(u_nom, "u_nom", m)
    u_prev = as_vector(u_prev, "u_prev", m)
    u0 = u_nom if lin_point is None else as_vector(lin_point, "lin_point", m)
    state = state or SafetyState()
    p = len(barriers)
    rows, slack_rows, rhs, tags, ids, names = [], [], [], [], [], []

    kappa = _per_item(params.kappa, p, "kappa") if p else np.zeros(0)
    eps = _per_item(params.eps_margin, p, "eps_margin") if p else np.zeros(0)
    linearized = []
    for i, bar in enumerate(barriers):
        if bar.grad_u.size != m:
            raise InputError(f"barrier {bar.id}: grad_u has size {bar.grad_u.size}, expected {m}")
        if lin_point is not None and bar.h_next_fn is not None:
            bar = bar.relinearize(u0)
        linearized.append(bar)
        anchor = u_nom if bar.anchor is None else bar.anchor
        k_i = kappa[i] if bar.kappa is None else bar.kappa
        e_i = eps[i] if bar.eps is None else bar.eps
        s = np.zeros(p)
        s[i] = 1.0
        rows.append(bar.grad_u)
        slack_rows.append(s)
        rhs.append(e_i + (1 - k_i * params.dt) * bar.h - bar.h_next_at_anchor + bar.grad_u @ anchor)
        tags.append("CBF")
        ids.append(bar.id)
        names.append(f"CBF:{bar.rule or bar.id}")

    # NTB: first-order expansion of e'Me <= b_max about u0
    if state.exposure_A is not None and params.M is not None:
        e0 = state.exposure_error(u0)
        q0 = float(e0 @ params.M @ e0)
        grad = 2.0 * state.exposure_A.T @ params.M @ e0
        rows.append(-grad)
        rhs.append(q0 - grad @ u0 - params.b_max)
    else:
        rows.append(np.zeros(m))
        rhs.append(-np.inf)
    slack_rows.append(np.zeros(p))
    tags.append("NTB")
    ids.append("ntb")
    names.append("NTB:ntb")

    # box merged with the inner trust box of the rate ball
    half = params.r_max / np.sqrt(m)
    for i in range(m):
        e = np.zeros(m)
        e[i] = 1.0
        trust_lo, trust_hi = u_prev[i] - half, u_prev[i] + half
        lo_tag = "RATE" if trust_lo > params.u_min[i] else "BOX"
        hi_tag = "RATE" if trust_hi < params.u_max[i] else "BOX"
        for sign, bound, tag, side in (
            (1.0, max(params.u_min[i], trust_lo), lo_tag, "lo"),
            (-1.0, -min(params.u_max[i], trust_hi), hi_tag, "hi"),
        ):
            rows.append(sign * e)
            slack_rows.append(np.zeros(p))
            rhs.append(bound)
            tags.append(tag)
            ids.append(f"{side}_{i}")
            names.append(f"{tag}:{side}_{i}")

    # rate: squared form linearized about u0
    d0 = u0 - u_prev
    grad = 2.0 * d0
    rows.append(-grad)
    slack_rows.append(np.zeros(p))
    rhs.append(float(d0 @ d0) - grad @ u0 - params.r_max**2 if np.isfinite(params.r_max) else -np.inf)
    tags.append("RATE")
    ids.append("rate")
    names.append("RATE:rate")

    if state.signals is not None:
        sig = np.atleast_2d(np.asarray(state.signals, float))
        if sig.shape[1] != m:
            raise InputError("gate signals must have m columns")
        for j, v in enumerate(sig):
            rows.append(v)
            slack_rows.append(np.zeros(p))
            rhs.append(params.delta_adv)
            tags.append("GATE")
            ids.append(f"gate_{j}")
            names.append(f"GATE:gate_{j}")

    return QpProblem(
        H=params.H,
        c=params.c,
        rho_slack=params.rho_slack,
        u_nom=u_nom,
        u_prev=u_prev,
        A=np.array(rows, float).reshape(-1, m),
        S=np.array(slack_rows, float).reshape(len(rows), p),
        b=np.array(rhs, float),
        tags=tags,
        ids=ids,
        names=names,
        lin_point=u0,
        params=params,
        state=state,
        barriers=linearized,
    )


def _active(problem, u, slack, duals, act_tol):
    res = problem.residuals(u, slack)
    norms = np.linalg.norm(np.hstack([problem.A, problem.S]), axis=1)
    return [
        i
        for i in range(problem.n_rows)
        if np.isfinite(problem.b[i]) and norms[i] > 0 and abs(res[i]) <= act_tol * norms[i] and duals[i] > 0
    ]


def solve_qp(problem, warmstart=None, settings=None, act_tol=ACT_TOL):
    """Solve min 1/2|u-u_nom|_H^2 + c'u + rho 1'zeta over the problem rows and zeta >= 0."""
    settings = settings or QpSettings()
    m, p, r = problem.n_u, problem.n_slack, problem.n_rows
    H, c = problem.H, problem.c

    # the unconstrained minimizer is optimal whenever it satisfies every row with zero slack
    u_free = problem.u_nom - np.linalg.solve(H, c) if np.any(c) else problem.u_nom.copy()
    if np.all(problem.A @ u_free >= problem.b):
        return QpSolution(u_free, np.zeros(p), np.zeros(r), [], "optimal", 0, 0.0, {})

    wu = wd = None
    if warmstart is not None:
        wu, wd = warmstart
        wu = np.asarray(wu, float) if wu is not None and np.shape(wu) == (m,) else None
        wd = -np.asarray(wd, float) if wd is not None and np.shape(wd) == (r,) else None
    q_u = c - H @ problem.u_nom
    time_used, iters = 0.0, 0

    # phase 1: slack pinned at zero. If every CBF multiplier stays below rho this
    # point satisfies the KKT system of the penalized program (exact penalty).
    if p:
        res = solve_dense_qp(H, q_u, problem.A, problem.b, np.full(r, np.inf), settings, x0=wu, y0=wd)
        time_used, iters = res.solve_time, res.iterations
        duals = np.maximum(-res.y, 0.0)
        cbf = np.any(problem.S != 0, axis=1)
        if res.status == "optimal" and np.all(duals[cbf] <= problem.rho_slack):
            active = _active(problem, res.x, np.zeros(p), duals, act_tol)
            return QpSolution(res.x, np.zeros(p), duals, active, "optimal", iters, time_used, res.kkt)

    # phase 2: the full penalized program in z = [u; zeta]
    n = m + p
    P = np.zeros((n, n))
    P[:m, :m] = H
    q = np.concatenate([q_u, np.full(p, problem.rho_slack)])
    A_full = np.vstack([np.hstack([problem.A, problem.S]), np.hstack([np.zeros((p, m)), np.eye(p)])])
    lower = np.concatenate([problem.b, np.zeros(p)])
    upper = np.full(r + p, np.inf)
    x0 = None if wu is None else np.concatenate([wu, np.zeros(p)])
    y0 = None if wd is None else np.concatenate([wd, np.zeros(p)])
    res = solve_dense_qp(P, q, A_full, lower, upper, settings, x0=x0, y0=y0)
    u = res.x[:m]
    slack = np.maximum(res.x[m:], 0.0)
    duals = np.maximum(-res.y[:r], 0.0)
    active = _active(problem, u, slack, duals, act_tol) if res.status == "optimal" else []
    return QpSolution(
        u, slack, duals, active, res.status, iters + res.iterations, time_used + res.solve_time, res.kkt
    )


def shrink_guards(params, time_to_expiry, vol_regime="normal"):
    """Shrink b_max and r_max once when near expiry or in an extreme-vol regime."""
    if time_to_expiry < 0:
        raise InputError("time_to_expiry must be >= 0")
    if params.shrunk:
        return params
    if time_to_expiry < params.ttx_threshold or vol_regime == "extreme":
        return replace(params, b_max=params.b_max * params.eta_b, r_max=params.r_max * params.eta_r, shrunk=True)
    return params


def check_invariance_margin(barrier, L, w_bar):
    """Smallest CBF margin eps_i = L_i * w_bar under which invariance holds."""
    if L < 0 or w_bar < 0:
        raise InputError("L and w_bar must be nonnegative")
    return float(L * w_bar)


def eta_b_star(M, b_max, delta_b, delta_e):
    """Smallest admissible NTB shrink factor for an exposure drift bound ``delta_e``."""
    eig = np.linalg.eigvalsh(np.asarray(M, float))
    return float(eig[-1] / b_max * (np.sqrt((b_max - delta_b) / eig[0]) + delta_e) ** 2)
