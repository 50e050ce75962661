"""Explanation records, hash-chained storage, runtime triggers and audit queries."""

import csv
import hashlib
import json
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .exceptions import RecordRejected, StorageError

RECORD_FIELDS = (
    "run_id",
    "episode_id",
    "step",
    "timestamp",
    "state_hash",
    "action_nominal",
    "action_safe",
    "H_norm_deviation",
    "active_set",
    "tightest_id",
    "multipliers",
    "rate_util",
    "gate_score",
    "slack_sum",
    "solver_status",
    "solver_time_ms",
    "rule_names",
    "rationale_text",
    "kl_step",
    "tail_coverage",
    "alpha",
)

STATUSES = ("optimal", "max_iter", "infeasible")
TAGS = ("CBF", "NTB", "BOX", "RATE", "GATE")

# Human-readable explanations per rule family.
RULE_TEXT = {
    "leverage": "Leverage cannot exceed L_max; trade reduced to keep h_lev >= 0.",
    "liquidity": "Order size limited by available depth/impact budget.",
    "short_sale": "Short inventory cannot breach Q_min.",
    "drawdown": "Cumulative drawdown kept below D_max.",
    "rate": "Adjustment rate bounded by r_max to avoid whipsaw.",
    "ntb": "Exposure error confined within the no-trade band.",
    "gate": "Trade direction must align with signals beyond delta_adv.",
    "box": "Trade size held within the per-instrument limits [u_min, u_max].",
}
TAG_RULE = {"NTB": "ntb", "BOX": "box", "RATE": "rate", "GATE": "gate"}

INTERCEPT_TOL = 1e-9
RATE_TOL = 1e-6


@dataclass
class TelemetryRecord:
    run_id: str
    episode_id: int
    step: int
    timestamp: str
    state_hash: str
    action_nominal: list
    action_safe: list
    H_norm_deviation: float
    active_set: list
    tightest_id: int
    multipliers: list
    rate_util: float
    gate_score: float
    slack_sum: float
    solver_status: str
    solver_time_ms: float
    rule_names: list
    rationale_text: str
    kl_step: float = None
    tail_coverage: float = None
    alpha: float = None

    def to_dict(self):
        return {name: getattr(self, name) for name in RECORD_FIELDS}

    @classmethod
    def from_dict(cls, d):
        missing = set(RECORD_FIELDS) - set(d)
        extra = set(d) - set(RECORD_FIELDS)
        if missing or extra:
            raise RecordRejected("record fields do not match schema", [f"missing={sorted(missing)}", f"extra={sorted(extra)}"])
        return cls(**{name: d[name] for name in RECORD_FIELDS})

    @property
    def intercepted(self):
        return any(abs(a - b) > INTERCEPT_TOL * (1 + abs(a)) for a, b in zip(self.action_nominal, self.action_safe))

    def tightest_tag(self):
        """Tag of the tightest row if it is active, else None."""
        if self.tightest_id in self.active_set:
            name = self.rule_names[self.active_set.index(self.tightest_id)]
            return name.split(":", 1)[0]
        return None

    def validate(self):
        diags = []
        if [f.name for f in fields(self)] != list(RECORD_FIELDS):
            diags.append("field set differs from schema")
        for name in ("H_norm_deviation", "rate_util", "slack_sum", "solver_time_ms"):
            val = getattr(self, name)
            if not isinstance(val, (int, float)) or not math.isfinite(val):
                diags.append(f"{name} must be a finite number")
        if not diags:
            if self.slack_sum < 0:
                diags.append("slack_sum must be >= 0")
            if self.H_norm_deviation < 0:
                diags.append("H_norm_deviation must be >= 0")
            if not 0 <= self.rate_util <= 1 + RATE_TOL:
                diags.append(f"rate_util {self.rate_util} outside [0, 1+tol]")
        if self.solver_status not in STATUSES:
            diags.append(f"unknown solver_status {self.solver_status!r}")
        if len(self.action_nominal) != len(self.action_safe):
            diags.append("action_nominal and action_safe differ in length")
        if len(self.rule_names) != len(self.active_set):
            diags.append("rule_names must align with active_set")
        if self.intercepted and not self.rationale_text:
            diags.append("rationale_text required when the action was intercepted")
        return diags


def rule_key(name):
    """Map 'TAG:detail' row names to a RULE_TEXT key."""
    tag, _, detail = name.partition(":")
    if tag == "CBF":
        return detail if detail in RULE_TEXT else None
    return TAG_RULE.get(tag)


def render_rationale(rule_names, tightest_name, deviation, multiplier):
    """Fixed-template rationale; an empty list of rule names gives an empty string."""
    if not rule_names and tightest_name is None:
        return ""
    key = rule_key(tightest_name) if tightest_name else None
    phrase = RULE_TEXT.get(key, f"Constraint {tightest_name} is binding.")
    active = ", ".join(rule_names) if rule_names else "none"
    return (
        f"Action adjusted. {phrase} "
        f"Tightest constraint: {tightest_name} (multiplier {multiplier:.6g}). "
        f"Active constraints: {active}. "
        f"H-norm deviation from nominal: {deviation:.6g}."
    )


def state_hash(*arrays):
    h = hashlib.sha256()
    for arr in arrays:
        h.update(np.ascontiguousarray(np.asarray(arr, dtype=float)).tobytes())
    return h.hexdigest()[:16]


# storage

def _canonical(record):
    return json.dumps(record.to_dict(), separators=(",", ":"), allow_nan=False)


@dataclass
class Receipt:
    record_id: int
    content_hash: str
    chain_hash: str


class RecordStore:
    """Append-only JSONL store; the hash chain lives in a ``.chain`` sidecar."""

    GENESIS = "0" * 64

    def __init__(self, path):
        self.path = os.fspath(path)
        self.chain_path = self.path + ".chain"
        self._count = None
        self._last = None

    def _load_tail(self):
        if self._count is not None:
            return
        self._count, self._last = 0, self.GENESIS
        if os.path.exists(self.chain_path):
            with open(self.chain_path) as fh:
                for line in fh:
                    entry = json.loads(line)
                    self._count += 1
                    self._last = entry["chain_hash"]

    def __len__(self):
        self._load_tail()
        return self._count

    def append(self, record):
        diags = record.validate()
        if diags:
            raise RecordRejected("record failed invariants", diags)
        try:
            line = _canonical(record)
        except ValueError as exc:
            raise RecordRejected("record not serializable", [str(exc)]) from exc
        self._load_tail()
        content = hashlib.sha256(line.encode()).hexdigest()
        chain = hashlib.sha256((self._last + content).encode()).hexdigest()
        receipt = Receipt(self._count, content, chain)
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        with open(self.path, "a") as fh:
            fh.write(line + "\n")
        with open(self.chain_path, "a") as fh:
            fh.write(json.dumps(asdict(receipt)) + "\n")
        self._count += 1
        self._last = chain
        return receipt

    def iter_records(self):
        if not os.path.exists(self.path):
            return
        if not os.path.isfile(self.path):
            raise StorageError(f"{self.path} is not a file")
        try:
            with open(self.path) as fh:
                for line in fh:
                    if line.strip():
                        yield TelemetryRecord.from_dict(json.loads(line))
        except (OSError, json.JSONDecodeError) as exc:
            raise StorageError(f"cannot read {self.path}: {exc}") from exc

    def verify(self):
        """Recompute the chain; returns (ok, index of first mismatch or None)."""
        if not os.path.exists(self.path):
            return True, None
        last = self.GENESIS
        try:
            with open(self.path, "rb") as data, open(self.chain_path) as chain:
                lines = [ln for ln in data.read().split(b"\n") if ln]
                entries = [json.loads(ln) for ln in chain if ln.strip()]
        except (OSError, json.JSONDecodeError) as exc:
            raise StorageError(f"cannot read store: {exc}") from exc
        if len(lines) != len(entries):
            return False, min(len(lines), len(entries))
        for i, (line, entry) in enumerate(zip(lines, entries)):
            content = hashlib.sha256(line).hexdigest()
            last = hashlib.sha256((last + content).encode()).hexdigest()
            if last != entry["chain_hash"]:
                return False, i
        return True, None


def append_record(store, record):
    return store.append(record)


# triggers

@dataclass
class TriggerConfig:
    slack_k: int = 1
    rate_threshold: float = 0.95
    rate_span: int = 60
    gate_pass_min: float = 0.85
    gate_span: int = 390
    kl_ceiling: float = 0.02
    kl_window: int = 20
    kl_consecutive: int = 5


@dataclass
class TriggerEvent:
    kind: str
    stats: dict
    fired_at: int
    action: str


def _p95(values):
    return float(np.percentile(np.asarray(values, float), 95))


def eval_triggers(window, config=None):
    """Evaluate the four runtime triggers on a time-ordered window of records."""
    config = config or TriggerConfig()
    if not 1 <= config.slack_k <= 3:
        raise ValueError("slack_k must be in [1, 3]")
    events = []
    run = 0
    for rec in window:
        run = run + 1 if rec.slack_sum > 0 else 0
        if run == config.slack_k:
            events.append(
                TriggerEvent("slack", {"consecutive": run}, rec.step, "downscale action norm; alert MRM; freeze size on repeat")
            )
    if window:
        tail = window[-config.rate_span :]
        p95 = _p95([r.rate_util for r in tail])
        if p95 > config.rate_threshold:
            events.append(
                TriggerEvent("rate_saturation", {"p95_rate_util": p95, "n": len(tail)}, tail[-1].step, "tighten r_max by eta_r; stagger orders")
            )
        gated = [r for r in window[-config.gate_span :] if r.gate_score is not None]
        if gated:
            passed = sum(not any(n.startswith("GATE:") for n in r.rule_names) for r in gated)
            rate = passed / len(gated)
            if rate < config.gate_pass_min:
                events.append(
                    TriggerEvent("gate", {"pass_rate": rate, "n": len(gated)}, gated[-1].step, "raise delta_adv; review signals; fall back to QP-only baseline")
                )
    kl = [(r.step, r.kl_step) for r in window if r.kl_step is not None]
    streak = 0
    for i in range(len(kl)):
        lo = max(0, i + 1 - config.kl_window)
        p95 = _p95([v for _, v in kl[lo : i + 1]])
        streak = streak + 1 if p95 > config.kl_ceiling else 0
        if streak == config.kl_consecutive:
            events.append(
                TriggerEvent("kl_drift", {"p95_kl_step": p95, "ceiling": config.kl_ceiling}, kl[i][0], "raise lambda_KL; slow the alpha schedule")
            )
    return events


# incidents

@dataclass
class Incident:
    severity: str
    condition: dict
    owner: str
    response: str


_INCIDENTS = {
    "S1": ("TR/MR", "log record; no halt; monitor tightest frequencies"),
    "S2": ("MRM/CO", "apply penalty; partial freeze; review constraints; RCA within 1d"),
    "S3": ("OPS/MRM", "failover; revert to baseline QP-only; RCA within 4h; postmortem"),
}


def classify_incident(intercepted, slack_positive, repeated_rate_saturation, solver_failed):
    """Severity by precedence S3 > S2 > S1; returns None when nothing happened."""
    cond = {
        "intercepted": bool(intercepted),
        "slack_positive": bool(slack_positive),
        "repeated_rate_saturation": bool(repeated_rate_saturation),
        "solver_failed": bool(solver_failed),
    }
    if solver_failed:
        sev = "S3"
    elif slack_positive or repeated_rate_saturation:
        sev = "S2"
    elif intercepted:
        sev = "S1"
    else:
        return None
    owner, response = _INCIDENTS[sev]
    return Incident(sev, cond, owner, response)


def _classify_stream(records, saturation_repeat=2):
    streak = {}
    for rec in records:
        key = (rec.run_id, rec.episode_id)
        sat = rec.rate_util >= 1 - RATE_TOL
        streak[key] = streak.get(key, 0) + 1 if sat else 0
        incident = classify_incident(
            rec.intercepted,
            rec.slack_sum > 0,
            streak[key] >= saturation_repeat,
            rec.solver_status != "optimal",
        )
        yield rec, incident


# audit

@dataclass
class AuditSummary:
    n_records: int = 0
    tightest_histogram: dict = field(default_factory=dict)
    intercept_cost_mean: float = 0.0
    feasibility_rate: float = 0.0
    severity_counts: dict = field(default_factory=dict)

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["metric", "key", "value"])
            writer.writerow(["n_records", "", self.n_records])
            writer.writerow(["feasibility_rate", "", self.feasibility_rate])
            writer.writerow(["intercept_cost_mean", "", self.intercept_cost_mean])
            for k, v in sorted(self.tightest_histogram.items()):
                writer.writerow(["tightest", k, v])
            for k, v in sorted(self.severity_counts.items()):
                writer.writerow(["severity", k, v])


class AuditQuery:
    """Lazy filtered view over a store; iterate for (record, incident) pairs."""

    def __init__(self, store, run_id=None, episode_range=None, constraint=None, severity=None, time_range=None):
        self.store = store
        self.run_id = run_id
        self.episode_range = episode_range
        self.constraint = constraint
        self.severity = severity
        self.time_range = time_range

    def _match(self, rec, incident):
        if self.run_id is not None and rec.run_id != self.run_id:
            return False
        if self.episode_range is not None and not self.episode_range[0] <= rec.episode_id <= self.episode_range[1]:
            return False
        if self.time_range is not None and not self.time_range[0] <= rec.timestamp <= self.time_range[1]:
            return False
        if self.constraint is not None:
            if isinstance(self.constraint, int):
                if self.constraint not in rec.active_set:
                    return False
            elif not any(n == self.constraint or n.startswith(self.constraint + ":") for n in rec.rule_names):
                return False
        if self.severity is not None and (incident is None or incident.severity != self.severity):
            return False
        return True

    def __iter__(self):
        for rec, incident in _classify_stream(self.store.iter_records()):
            if self._match(rec, incident):
                yield rec, incident

    def summary(self):
        n = feasible = intercepts = 0
        cost = 0.0
        hist, sev = Counter(), Counter()
        for rec, incident in self:
            n += 1
            feasible += rec.solver_status == "optimal" and rec.slack_sum == 0
            hist[rec.tightest_tag() or "none"] += 1
            if rec.intercepted:
                intercepts += 1
                cost += rec.H_norm_deviation
            if incident is not None:
                sev[incident.severity] += 1
        return AuditSummary(
            n_records=n,
            tightest_histogram=dict(hist),
            intercept_cost_mean=cost / intercepts if intercepts else 0.0,
            feasibility_rate=feasible / n if n else 0.0,
            severity_counts=dict(sev),
        )


def audit_query(store, **filters):
    if isinstance(store, (str, os.PathLike)):
        store = RecordStore(store)
    return AuditQuery(store, **filters)
