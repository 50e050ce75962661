"""Per-step safety filter: assemble, solve, re-linearize, certify and log."""

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np
from sklearn.base import BaseEstimator

from ..governance import TelemetryRecord, render_rationale, state_hash
from .problem import QpSolution, SafetyState, assemble_qp, shrink_guards, solve_qp
from .qp import QpSettings, solve_dense_qp

BUFFER = 1e-9
SLACK_TOL = 1e-9
CERT_TOL = 1e-9
_EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)


def sim_timestamp(step, seconds_per_step=60.0):
    return (_EPOCH + timedelta(seconds=float(step) * seconds_per_step)).isoformat()


@dataclass
class FilterOutcome:
    u_safe: np.ndarray
    record: TelemetryRecord
    solution: QpSolution
    problem: object
    params: object
    certified: bool
    fallback: bool

    @property
    def penalty(self):
        """True when the step should be charged the learner-side safety penalty."""
        return self.record.slack_sum > 0 or self.record.solver_status != "optimal"


def _violations(problem, u, slack=None):
    """Exact (not linearized) violations of the band and nonlinear barriers at u."""
    out = {}
    params, state = problem.params, problem.state
    if state is not None and state.exposure_A is not None and params.M is not None and np.isfinite(params.b_max):
        e = state.exposure_error(u)
        v = float(e @ params.M @ e) - params.b_max
        if v > CERT_TOL * (1 + params.b_max):
            out["ntb"] = v
    for i, bar in enumerate(problem.barriers):
        if bar.h_next_fn is None or bar.affine_in_u:
            continue
        row = problem.ids.index(bar.id)
        # row with the exact h_next in place of its linearization
        anchor = problem.u_nom if bar.anchor is None else bar.anchor
        need = problem.b[row] - bar.grad_u @ anchor + bar.h_next_at_anchor
        soft = 0.0 if slack is None else float(slack[i])
        v = need - soft - float(bar.h_next_fn(u))
        if v > CERT_TOL * (1 + abs(need)):
            out[bar.id] = v
    return out


def _solve_certified(state, u_nom, u_prev, barriers, params, warm, settings, relinearize_passes, max_certify):
    problem = assemble_qp(state, u_nom, u_prev, barriers, params)
    sol = solve_qp(problem.tightened(BUFFER), warm, settings)
    nonlinear = (state.exposure_A is not None and params.M is not None) or any(b.h_next_fn is not None and not b.affine_in_u for b in barriers)
    if sol.status != "optimal" or not nonlinear:
        return problem, sol, True
    for _ in range(relinearize_passes):
        if np.allclose(sol.u, problem.lin_point, rtol=0, atol=1e-14):
            break
        problem = assemble_qp(state, u_nom, u_prev, barriers, params, lin_point=sol.u)
        sol = solve_qp(problem.tightened(BUFFER), (sol.u, sol.duals), settings)
        if sol.status != "optimal":
            return problem, sol, True
    # keep the linearization, push each violated row inward by its exact
    # violation, doubling the push each round so slow curvature cases still certify
    tight = problem.tightened(BUFFER)
    for k in range(max_certify):
        viol = _violations(problem, sol.u, sol.slack)
        if not viol:
            return problem, sol, True
        for key, v in viol.items():
            tight = tight.shifted(problem.ids.index(key), v * 2.0**k)
        sol = solve_qp(tight, (sol.u, sol.duals), settings)
        if sol.status != "optimal":
            return problem, sol, True
    return problem, sol, not _violations(problem, sol.u, sol.slack)


def _fallback(problem, params, state, settings, weight=1e-3):
    """Best-effort action when the hard rows are inconsistent.

    Keeps only the box rows (already intersected with the trust box inside the
    rate ball) and minimizes the band excess (A u - d)' M (A u - d) plus a small
    pull toward u_nom; without a band it is the box projection of u_nom.
    """
    keep = [i for i, ident in enumerate(problem.ids) if ident.startswith(("lo_", "hi_")) and np.isfinite(problem.b[i])]
    H, u_nom = problem.H, problem.u_nom
    P, q = H.copy(), -H @ u_nom
    if state.exposure_A is not None and params.M is not None:
        A, d = state.exposure_A, state.exposure_d
        P = weight * H + 2 * A.T @ params.M @ A
        q = -weight * H @ u_nom - 2 * A.T @ params.M @ d
    rows = problem.A[keep]
    res = solve_dense_qp(P, q, rows, problem.b[keep], np.full(len(keep), np.inf), settings)
    if res.status == "optimal":
        return res.x
    return np.clip(problem.u_prev, params.u_min, params.u_max)


def filter_step(
    state,
    u_nom,
    u_prev,
    barriers,
    params,
    time_to_expiry=np.inf,
    vol_regime="normal",
    warm=None,
    settings=None,
    relinearize_passes=1,
    max_certify=8,
    context=None,
):
    """Full filter step; returns a FilterOutcome with the QP solution attached."""
    state = state or SafetyState()
    settings = settings or QpSettings()
    context = context or {}
    p = shrink_guards(params, time_to_expiry, vol_regime)
    problem, sol, certified = _solve_certified(
        state, u_nom, u_prev, barriers, p, warm, settings, relinearize_passes, max_certify
    )
    status = sol.status
    if status == "optimal" and not certified:
        status = "max_iter"
    fallback = status == "infeasible"
    if fallback:
        u_safe = _fallback(problem, p, state, settings)
        slack = np.zeros(problem.n_slack)
    else:
        u_safe = sol.u.copy()
        slack = np.where(sol.slack > SLACK_TOL, sol.slack, 0.0)

    res = problem.residuals(u_safe, slack)
    norms = np.linalg.norm(np.hstack([problem.A, problem.S]), axis=1)
    ok = np.isfinite(problem.b) & (norms > 0)
    scaled = np.where(ok, res / np.where(norms > 0, norms, 1.0), np.inf)
    tightest = int(np.argmin(scaled)) if ok.any() else -1
    active = [] if fallback else sol.active_set
    names = [problem.names[i] for i in active]
    duals = np.zeros(problem.n_rows) if fallback else sol.duals

    d = u_safe - problem.u_nom
    dev = float(np.sqrt(max(d @ p.H @ d, 0.0)))
    rate_util = 0.0
    if np.isfinite(p.r_max):
        rate_util = float(min(np.linalg.norm(u_safe - problem.u_prev) / p.r_max, 1.0 + 1e-7))
    gate_score = None
    if state.signals is not None:
        gate_score = float(np.min(np.atleast_2d(state.signals) @ u_safe) - p.delta_adv)
    tight_name = problem.names[tightest] if tightest >= 0 else "objective"
    mult = float(duals[tightest]) if tightest >= 0 else 0.0
    intercepted = bool(np.any(np.abs(d) > 1e-9 * (1 + np.abs(problem.u_nom))))
    rationale = render_rationale(names, tight_name, dev, mult) if intercepted else ""
    hashed = [problem.u_nom, problem.u_prev, [b.h for b in barriers]]
    if state.exposure_A is not None:
        hashed += [state.exposure_A, state.exposure_d]
    step = int(context.get("step", 0))
    record = TelemetryRecord(
        run_id=str(context.get("run_id", "adhoc")),
        episode_id=int(context.get("episode_id", 0)),
        step=step,
        timestamp=context.get("timestamp") or sim_timestamp(step),
        state_hash=state_hash(*hashed),
        action_nominal=[float(x) for x in problem.u_nom],
        action_safe=[float(x) for x in u_safe],
        H_norm_deviation=dev,
        active_set=[int(i) for i in active],
        tightest_id=tightest,
        multipliers=[float(x) for x in duals],
        rate_util=rate_util,
        gate_score=gate_score,
        slack_sum=float(np.sum(slack)),
        solver_status=status,
        solver_time_ms=1e3 * sol.solve_time,
        rule_names=names,
        rationale_text=rationale,
        kl_step=context.get("kl_step"),
        tail_coverage=context.get("tail_coverage"),
        alpha=context.get("alpha"),
    )
    return FilterOutcome(u_safe, record, sol, problem, p, certified, fallback)


def safety_filter(state, u_nom, u_prev, barriers, params, time_to_expiry=np.inf, vol_regime="normal", **kwargs):
    """Project a nominal action onto the certified safe set; returns (u_safe, record)."""
    out = filter_step(state, u_nom, u_prev, barriers, params, time_to_expiry, vol_regime, **kwargs)
    return out.u_safe, out.record


class CbfQpFilter(BaseEstimator):
    """Stateful wrapper that carries the warm start and the last action across steps.

    Only the parameter half of the estimator protocol applies: the filter has
    no fit stage, and ``step`` replaces ``transform`` because each call needs
    the state, barriers and schedule context of the current time step.
    """

    def __init__(self, params=None, relinearize_passes=1, max_certify=8, settings=None):
        self.params = params
        self.relinearize_passes = relinearize_passes
        self.max_certify = max_certify
        self.settings = settings

    def reset(self, u_prev=None):
        self.u_prev_ = None if u_prev is None else np.asarray(u_prev, float)
        self.warm_ = None
        return self

    def step(self, state, u_nom, barriers=(), time_to_expiry=np.inf, vol_regime="normal", context=None):
        m = self.params.m
        u_prev = getattr(self, "u_prev_", None)
        u_prev = np.zeros(m) if u_prev is None else u_prev
        out = filter_step(
            state,
            u_nom,
            u_prev,
            list(barriers),
            self.params,
            time_to_expiry,
            vol_regime,
            warm=getattr(self, "warm_", None),
            settings=self.settings,
            relinearize_passes=self.relinearize_passes,
            max_certify=self.max_certify,
            context=context,
        )
        self.u_prev_ = out.u_safe.copy()
        if out.solution.status == "optimal":
            self.warm_ = (out.solution.u, out.solution.duals)
        self.last_ = out
        return out
