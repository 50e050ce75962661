"""Command-line entry point: calibrate, simulate, train, evaluate, report, audit.

Every command reads one YAML run config, derives a deterministic run id from
the config fingerprint and seed, and writes its artifacts under ``--out``
together with a manifest of artifact hashes.
"""

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from datetime import datetime, timezone

import numpy as np
import yaml
from scipy import stats as sps

from .evaluation import (
    HedgeConfig,
    HedgingEnv,
    Scenario,
    StressConfig,
    ToyConfig,
    ToyCostEnv,
    bh_fdr,
    default_surface,
    ecdf_table,
    gen_scenarios,
    paired_bootstrap_ci,
    perf_ratios,
    run_episode,
    vargha_delaney_a12,
)
from .exceptions import ConfigError, TailSafeError
from .execution import ImpactParams
from .governance import RecordStore, TriggerConfig, audit_query
from .learner import TrainConfig, init_state, train
from .market import CalibConfig, calibrate_ssvi, check_no_arbitrage
from .market.io import load_quotes_csv, load_surface, save_surface
from .tailrisk import var_es_empirical

log = logging.getLogger("tailsafe")

CHECKPOINT_VERSION = 1
COMMANDS = ("calibrate", "simulate", "train", "evaluate", "report", "audit")

STATE_KEYS = ("kl_ceiling", "ema_rate", "lr_actor", "minibatch", "clip_eps", "gamma", "lambda_gae")

DEFAULTS = {
    "seed": 0,
    "market": {"quotes": None, "surface": None, "quote_noise": 0.0, "calib": {}},
    "exec": {"eta": [0.002, 0.01], "kernel_scale": 0.001, "kernel_decay": 0.5, "kernel_len": 16, "spread": [0.02, 0.05]},
    "safety": {},
    "tailrisk": {"alpha_start": 0.10, "alpha_target": 0.025, "report_alphas": [0.01, 0.025, 0.05]},
    "learner": {"env": "toy", "checkpoint_every": 5, "train": {}, "state": {}, "toy": {}},
    "evaluation": {
        "n_per_cell": 20,
        "n_steps": 20,
        "methods": ["hold", "noise"],
        "noise_scale": 0.5,
        "checkpoint": None,
        "B_reps": 2000,
        "fdr_q": 0.05,
        "stress": {},
    },
    "governance": {"triggers": {}},
}


# config


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        kp = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError("unknown key", kp)
        if isinstance(base[k], dict) and base[k] and not isinstance(v, dict):
            raise ConfigError("expected a mapping", kp)
        out[k] = _merge(base[k], v, kp) if isinstance(base[k], dict) and base[k] else v
    return out


def _build(cls, values, path, **extra):
    names = {f.name for f in fields(cls)}
    for k in values:
        if k not in names:
            raise ConfigError("unknown key", f"{path}.{k}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**kw, **extra)
    except (TypeError, ValueError, TailSafeError) as exc:
        raise ConfigError(str(exc), path) from exc


def fingerprint(doc):
    """Content hash of the canonical (sorted-key, compact) JSON form."""
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class RunConfig:
    doc: dict
    out: str
    fingerprint: str

    @property
    def seed(self):
        return int(self.doc["seed"])

    def run_id(self, command):
        return f"{command}-{self.fingerprint[:12]}-s{self.seed}"

    def section(self, name):
        return self.doc[name]

    def hedge_config(self, n_steps=None):
        s, e = self.doc["safety"], self.doc["exec"]
        cfg = _build(HedgeConfig, s, "safety", spread=tuple(e["spread"]))
        if n_steps is not None:
            cfg = replace(cfg, n_steps=int(n_steps))
        return cfg

    def impact(self):
        e = self.doc["exec"]
        try:
            shape = float(e["kernel_scale"]) * np.exp(-float(e["kernel_decay"]) * np.arange(int(e["kernel_len"])))
            eta = np.asarray(e["eta"], float)
            return ImpactParams(eta, np.outer(shape, eta / eta[0]))
        except (TypeError, ValueError, IndexError, TailSafeError) as exc:
            raise ConfigError(str(exc), "exec") from exc

    def surface(self):
        path = self.doc["market"]["surface"]
        return load_surface(path)[0] if path else default_surface()

    def train_config(self):
        values = {"seed": self.seed, **self.doc["learner"]["train"]}
        return _build(TrainConfig, values, "learner.train")

    def state_overrides(self):
        st = dict(self.doc["learner"]["state"])
        for k in st:
            if k not in STATE_KEYS:
                raise ConfigError("unknown key", f"learner.state.{k}")
        t = self.doc["tailrisk"]
        st.update(alpha_start=float(t["alpha_start"]), alpha_target=float(t["alpha_target"]))
        return st

    def stress(self):
        return _build(StressConfig, self.doc["evaluation"]["stress"], "evaluation.stress")

    def triggers(self):
        return _build(TriggerConfig, self.doc["governance"]["triggers"], "governance.triggers")

    def validate(self):
        self.hedge_config()
        self.impact()
        self.train_config()
        self.stress()
        self.triggers()
        _build(CalibConfig, self.doc["market"]["calib"], "market.calib")
        _build(ToyConfig, self.doc["learner"]["toy"], "learner.toy")
        t = self.doc["tailrisk"]
        if not 0 < t["alpha_target"] <= t["alpha_start"] < 1:
            raise ConfigError("need 0 < alpha_target <= alpha_start < 1", "tailrisk")
        if self.doc["learner"]["env"] not in ("toy", "hedge"):
            raise ConfigError("must be 'toy' or 'hedge'", "learner.env")
        ev = self.doc["evaluation"]
        for m in ev["methods"]:
            if m not in ("hold", "noise", "policy"):
                raise ConfigError(f"unknown method {m!r}", "evaluation.methods")
        if len(set(ev["methods"])) != len(ev["methods"]) or not ev["methods"]:
            raise ConfigError("methods must be a nonempty list without repeats", "evaluation.methods")
        if int(ev["n_per_cell"]) < 2:
            raise ConfigError("need at least 2 paths per cell", "evaluation.n_per_cell")
        if int(ev["B_reps"]) < 1000:
            raise ConfigError("B_reps must be >= 1000", "evaluation.B_reps")
        return self


def load_config(path=None, seed=None, out=None):
    raw = {}
    if path:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping", "<root>")
    raw = dict(raw)
    out = out or raw.pop("out", None) or "runs"
    raw.pop("out", None)
    doc = _merge(DEFAULTS, raw)
    if seed is not None:
        doc["seed"] = int(seed)
    return RunConfig(doc, os.fspath(out), fingerprint(doc)).validate()


# artifacts


class Artifacts:
    """Tracks files written by one command and appends them to the run manifest."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.run_id = cfg.run_id(command)
        self.dir = os.path.join(cfg.out, command)
        os.makedirs(self.dir, exist_ok=True)
        self.files = []

    def path(self, name):
        p = os.path.join(self.dir, name)
        self.files.append(p)
        return p

    def header(self):
        return [f"run_id={self.run_id}", f"seed={self.cfg.seed}", f"fingerprint={self.cfg.fingerprint}"]

    def meta(self):
        return {"run_id": self.run_id, "seed": self.cfg.seed, "fingerprint": self.cfg.fingerprint}

    def write_csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            for line in self.header():
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    def write_json(self, name, payload):
        with open(self.path(name), "w") as fh:
            json.dump({**self.meta(), **payload}, fh, indent=1, sort_keys=True)
            fh.write("\n")

    def finish(self, status="ok"):
        mpath = os.path.join(self.cfg.out, "manifest.json")
        manifest = {"runs": []}
        if os.path.exists(mpath):
            with open(mpath) as fh:
                manifest = json.load(fh)
        arts = []
        for p in dict.fromkeys(self.files):
            if os.path.isfile(p):
                with open(p, "rb") as fh:
                    arts.append({"path": os.path.relpath(p, self.cfg.out), "sha256": hashlib.sha256(fh.read()).hexdigest()})
        manifest["runs"].append(
            {**self.meta(), "command": self.command, "status": status, "finished": datetime.now(timezone.utc).isoformat(), "artifacts": arts}
        )
        with open(mpath, "w") as fh:
            json.dump(manifest, fh, indent=1)
        with open(os.path.join(self.cfg.out, "config.resolved.yaml"), "w") as fh:
            yaml.safe_dump({**self.cfg.doc, "fingerprint": self.cfg.fingerprint}, fh, sort_keys=True)
        return status


# policies (module-level so worker processes can pickle them)


class HoldPolicy:
    def __init__(self, m):
        self.m = m

    def __call__(self, x, rng):
        return np.zeros(self.m)


class NoisePolicy:
    def __init__(self, m, scale):
        self.m, self.scale = m, scale

    def __call__(self, x, rng):
        return self.scale * rng.standard_normal(self.m)


# checkpoints


def _state_arrays(state):
    groups = {"theta": state.theta.params, "ref": state.ref.params, "psi": state.psi.params}
    groups.update({"opt_m": state.opt.m, "opt_v": state.opt.v, "psi_m": state.psi.opt.m, "psi_v": state.psi.opt.v})
    return groups


def save_checkpoint(path, state, cfg, run_id):
    arrays = {f"{g}/{i}": a for g, arr in _state_arrays(state).items() for i, a in enumerate(arr)}
    ctrl = state.ctrl
    meta = {
        "version": CHECKPOINT_VERSION,
        "run_id": run_id,
        "seed": cfg.seed,
        "fingerprint": cfg.fingerprint,
        "step": state.step,
        "total_steps": state.total_steps,
        "alpha": state.alpha,
        "lambda_kl": state.lambda_kl,
        "lambda_ent": state.lambda_ent,
        "kl_history": state.kl_history,
        "opt_t": state.opt.t,
        "psi_t": state.psi.opt.t,
        "ctrl": {
            "T": ctrl.T,
            "gamma_tail": ctrl.gamma_tail,
            "err_integral": ctrl.err_integral,
            "err_prev": ctrl.err_prev,
            "n_updates": ctrl.n_updates,
            "history": [list(map(float, h)) for h in ctrl.history],
        },
    }
    tmp = path + ".tmp.npz"
    np.savez(tmp, meta=np.array(json.dumps(meta)), **arrays)
    os.replace(tmp, path)


def load_checkpoint(path, state):
    """Restore arrays and scalars in place into a freshly initialized state of the same shape."""
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')}", "resume")
        for g, arr in _state_arrays(state).items():
            for i, a in enumerate(arr):
                saved = z[f"{g}/{i}"]
                if saved.shape != a.shape:
                    raise ConfigError(f"checkpoint array {g}/{i} has shape {saved.shape}, expected {a.shape}", "resume")
                a[...] = saved
    state.step = int(meta["step"])
    state.lambda_kl = float(meta["lambda_kl"])
    state.lambda_ent = float(meta["lambda_ent"])
    state.kl_history = list(meta["kl_history"])
    state.opt.t = int(meta["opt_t"])
    state.psi.opt.t = int(meta["psi_t"])
    c = meta["ctrl"]
    state.ctrl.T, state.ctrl.gamma_tail = c["T"], c["gamma_tail"]
    state.ctrl.err_integral, state.ctrl.err_prev, state.ctrl.n_updates = c["err_integral"], c["err_prev"], c["n_updates"]
    state.ctrl.history = [tuple(h) for h in c["history"]]
    return state, meta


def _env_dims(cfg):
    return (ToyCostEnv.d, ToyCostEnv.m) if cfg.doc["learner"]["env"] == "toy" else (HedgingEnv.d, HedgingEnv.m)


def _fresh_state(cfg):
    d, m = _env_dims(cfg)
    return init_state(d, m, cfg.train_config(), **cfg.state_overrides())


def _latest_checkpoint(directory):
    if not os.path.isdir(directory):
        return None
    cks = sorted(f for f in os.listdir(directory) if f.startswith("ckpt_") and f.endswith(".npz"))
    return os.path.join(directory, cks[-1]) if cks else None


def load_policy(path, cfg):
    state, _ = load_checkpoint(path, _fresh_state(cfg))
    return state.theta


# commands


def cmd_calibrate(cfg, args):
    art = Artifacts(cfg, "calibrate")
    mk = cfg.section("market")
    if mk["quotes"]:
        quotes = load_quotes_csv(mk["quotes"])
        source = mk["quotes"]
    else:
        # synthetic quotes from the reference surface, optionally perturbed
        ref = default_surface()
        ks = np.linspace(-0.5, 0.5, 11)
        quotes = np.array([(k, t, ref.implied_vol(k, t), 1.0) for t in ref.maturities for k in ks])
        if mk["quote_noise"]:
            rng = np.random.default_rng(cfg.seed)
            quotes[:, 2] += mk["quote_noise"] * rng.standard_normal(len(quotes))
        source = "synthetic"
    res = calibrate_ssvi(quotes, _build(CalibConfig, mk["calib"], "market.calib"))
    path = art.path("surface.yaml")
    save_surface(path, res.surface)
    with open(path, "a") as fh:
        yaml.safe_dump({"meta": art.meta()}, fh)
    report = check_no_arbitrage(res.surface)
    art.write_json(
        "arbitrage_report.json",
        {
            "source": source,
            "n_quotes": int(len(quotes)),
            "cost": float(res.cost),
            "n_iter": int(res.n_iter),
            "flags": [str(f) for f in res.flags],
            "ok": report.ok,
            "violations": [asdict(v) for v in report.violations],
        },
    )
    print(f"calibrate: {len(quotes)} quotes, arbitrage-free={report.ok}, surface -> {path}")
    return art.finish()


def _scenario_set(cfg):
    ev = cfg.section("evaluation")
    base = Scenario(cfg.surface(), impact=cfg.impact())
    sset = gen_scenarios(base, cfg.stress(), int(ev["n_per_cell"]), master_seed=cfg.seed)
    for name, rep in sset.rejected.items():
        log.warning("cell %s rejected: %d arbitrage violations", name, len(rep))
    return sset


def _episode_task(task):
    scenario, policy, hedge, run_id, episode_id, trig = task
    res = run_episode(scenario, policy, config=hedge, run_id=run_id, episode_id=episode_id, deterministic=True,
                      trigger_config=trig)
    res.step_losses = None
    return res


def _run_all(tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_episode_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return [_episode_task(t) for t in tasks]


EPISODE_HEADER = ["method", "cell", "index", "seed", "pnl_T", "loss_T", "cost_total", "n_steps", "slack_events", "intercepts", "gate_pass_rate"]


def _episode_row(method, r):
    return [method, r.cell, r.index, r.seed, repr(r.pnl_T), repr(r.loss_T), repr(r.cost_total), r.n_steps, r.slack_events, r.intercepts, repr(r.gate_pass_rate)]


def cmd_simulate(cfg, args):
    art = Artifacts(cfg, "simulate")
    ev = cfg.section("evaluation")
    hedge = cfg.hedge_config(ev["n_steps"])
    sset = _scenario_set(cfg)
    rows = []
    for sc in sset.scenarios:
        env = HedgingEnv(sc, hedge)
        for t, (s, lv) in enumerate(zip(env.spot, env.level)):
            rows.append([sc.cell, sc.index, sc.seed, t, repr(float(s)), repr(float(lv)), repr(env.vix(lv))])
    art.write_csv("paths.csv", ["cell", "index", "seed", "t", "spot", "vol_level", "vix"], rows)
    tasks = [(sc, HoldPolicy(2), hedge, art.run_id, i, cfg.triggers()) for i, sc in enumerate(sset.scenarios)]
    results = _run_all(tasks, args.jobs)
    art.write_csv("episodes.csv", EPISODE_HEADER, [_episode_row("hold", r) for r in results])
    print(f"simulate: {len(sset.scenarios)} paths over {len(sset.cells())} cells -> {art.dir}")
    return art.finish()


def _sub_seed(*keys):
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def _train_env_factory(cfg):
    lr = cfg.section("learner")
    if lr["env"] == "toy":
        toy = _build(ToyConfig, lr["toy"], "learner.toy")
        return lambda it, i: ToyCostEnv(seed=_sub_seed(cfg.seed, it, i), config=toy)
    hedge = cfg.hedge_config(cfg.section("evaluation")["n_steps"])
    base = Scenario(cfg.surface(), impact=cfg.impact())
    return lambda it, i: HedgingEnv(replace(base, seed=_sub_seed(cfg.seed, it, i)), hedge)


def cmd_train(cfg, args):
    art = Artifacts(cfg, "train")
    tcfg = cfg.train_config()
    state = _fresh_state(cfg)
    resume = args.resume or (_latest_checkpoint(art.dir) if args.resume_latest else None)
    if resume:
        state, meta = load_checkpoint(resume, state)
        if meta["fingerprint"] != cfg.fingerprint:
            log.warning("resuming from a checkpoint written under a different config fingerprint")
        print(f"train: resumed at step {state.step} from {resume}")
    every = max(1, int(cfg.section("learner")["checkpoint_every"]))

    def save(st):
        save_checkpoint(art.path(f"ckpt_{st.step:06d}.npz"), st, cfg, art.run_id)

    log_path = art.path("train_log.jsonl")
    if state.step == 0:
        save(state)
        with open(log_path, "w") as fh:
            fh.write(json.dumps({"meta": art.meta()}) + "\n")

    def on_iteration(st, entry):
        if st.step % every == 0 or st.step >= tcfg.iterations:
            save(st)
        print(f"train: iter {entry['iter']} alpha={entry['alpha']:.4f} kl={entry['kl_step']:.4g} es={entry['es_loss']:.4g}")

    state, _ = train(state, _train_env_factory(cfg), tcfg, log_path=log_path, on_iteration=on_iteration)
    print(f"train: done at step {state.step}")
    return art.finish()


def _method_policy(cfg, method):
    ev = cfg.section("evaluation")
    if method == "hold":
        return HoldPolicy(2)
    if method == "noise":
        return NoisePolicy(2, float(ev["noise_scale"]))
    path = ev["checkpoint"] or _latest_checkpoint(os.path.join(cfg.out, "train"))
    if not path:
        raise ConfigError("method 'policy' needs a checkpoint (set evaluation.checkpoint or run train)", "evaluation.checkpoint")
    if cfg.section("learner")["env"] != "hedge":
        raise ConfigError("method 'policy' needs a policy trained with learner.env = hedge", "learner.env")
    return load_policy(path, cfg)


def _es(x, a):
    x = np.asarray(x, float)
    return var_es_empirical(x, 1 - a)[1] if x.size >= np.ceil(1 / a) else float("nan")


def _statistics(cfg, results):
    """Per (cell, method) summaries plus paired deltas against the first method."""
    ev = cfg.section("evaluation")
    alphas = [float(a) for a in cfg.section("tailrisk")["report_alphas"]]
    methods = ev["methods"]
    base = methods[0]
    rows, tests = [], []
    for cell in sorted({r.cell for rs in results.values() for r in rs}):
        by = {m: {r.index: r for r in results[m] if r.cell == cell} for m in methods}
        for m in methods:
            loss = np.array([by[m][i].loss_T for i in sorted(by[m])])
            sharpe, sortino, omega = perf_ratios(-loss)
            for name, val in [("mean_loss", loss.mean()), ("sharpe", sharpe), ("sortino", sortino), ("omega", omega)] + [
                (f"es_{a:g}", _es(loss, a)) for a in alphas
            ]:
                rows.append({"cell": cell, "metric": name, "method": m, "point": val, "ci_low": None, "ci_high": None, "p_adj": None, "a12": None})
        for m in methods[1:]:
            keys = sorted(set(by[base]) & set(by[m]))
            a = np.array([by[base][i].loss_T for i in keys])
            b = np.array([by[m][i].loss_T for i in keys])
            stats_ = [("delta_mean_loss", np.mean)] + [
                (f"delta_es_{al:g}", lambda x, al=al: _es(x, al)) for al in alphas if len(keys) >= np.ceil(1 / al)
            ]
            diff = b - a
            p = 1.0 if np.allclose(diff, 0) else float(sps.wilcoxon(b, a).pvalue)
            a12 = vargha_delaney_a12(b, a)
            for name, fn in stats_:
                pt, lo, hi = paired_bootstrap_ci(a, b, fn, B_reps=int(ev["B_reps"]), seed=cfg.seed)
                tests.append({"cell": cell, "metric": name, "method": m, "point": pt, "ci_low": lo, "ci_high": hi, "p": p, "a12": a12})
    if tests:
        _, adj = bh_fdr([t.pop("p") for t in tests], float(ev["fdr_q"]))
        for t, pa in zip(tests, adj):
            t["p_adj"] = float(pa)
    clean = lambda v: None if v is None or (isinstance(v, float) and not np.isfinite(v)) else float(v)  # noqa: E731
    out = rows + tests
    for r in out:
        for k in ("point", "ci_low", "ci_high", "p_adj", "a12"):
            r[k] = clean(r.get(k))
    return out


def cmd_evaluate(cfg, args):
    art = Artifacts(cfg, "evaluate")
    ev = cfg.section("evaluation")
    hedge = cfg.hedge_config(ev["n_steps"])
    sset = _scenario_set(cfg)
    trig = cfg.triggers()
    results, eid = {}, 0
    for method in ev["methods"]:
        pol = _method_policy(cfg, method)
        tasks = []
        for sc in sset.scenarios:
            tasks.append((sc, pol, hedge, f"{art.run_id}:{method}", eid, trig))
            eid += 1
        results[method] = _run_all(tasks, args.jobs)
    # single writer for the telemetry store
    tel = art.path("telemetry.jsonl")
    for p in (tel, tel + ".chain"):
        if os.path.exists(p):
            os.remove(p)
    art.files.append(tel + ".chain")
    store = RecordStore(tel)
    for method in ev["methods"]:
        for r in results[method]:
            for rec in r.records:
                store.append(rec)
    art.write_csv("episodes.csv", EPISODE_HEADER, [_episode_row(m, r) for m in ev["methods"] for r in results[m]])
    art.write_json(
        "statistics.json",
        {
            "seeds": sset.seeds,
            "methods": ev["methods"],
            "baseline": ev["methods"][0],
            "cells": sset.cells(),
            "rejected_cells": sorted(sset.rejected),
            "results": _statistics(cfg, results),
        },
    )
    trig_rows = [[m, r.cell, r.index, t.kind, t.fired_at, json.dumps(t.stats, sort_keys=True)] for m in ev["methods"] for r in results[m] for t in r.triggers]
    art.write_csv("triggers.csv", ["method", "cell", "index", "kind", "fired_at", "stats"], trig_rows)
    print(f"evaluate: {eid} episodes, {len(store)} telemetry records -> {art.dir}")
    return art.finish()


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def cmd_report(cfg, args):
    src = os.path.join(cfg.out, "evaluate")
    episodes = os.path.join(src, "episodes.csv")
    rows = _read_csv(episodes) if os.path.exists(episodes) else []
    if not rows:
        print(f"report: no results in {src}")
        return "no results"
    art = Artifacts(cfg, "report")
    alphas = [float(a) for a in cfg.section("tailrisk")["report_alphas"]]
    groups = {}
    for r in rows:
        groups.setdefault((r["method"], r["cell"]), []).append(float(r["loss_T"]))
    for (method, cell), losses in sorted(groups.items()):
        name = f"ecdf_{method}_{cell.replace(':', '-')}.csv"
        ecdf_table(losses, alphas).to_csv(art.path(name), art.header() + [f"method={method}", f"cell={cell}"])
    with open(os.path.join(src, "statistics.json")) as fh:
        st = json.load(fh)
    metric_rows = [[r["cell"], r["metric"], r["method"], r["point"], r["ci_low"], r["ci_high"], r["p_adj"], r["a12"]] for r in st["results"]]
    art.write_csv("metrics.csv", ["cell", "metric", "method", "point", "ci_low", "ci_high", "p_adj", "a12"], metric_rows)
    tel = os.path.join(src, "telemetry.jsonl")
    summary = audit_query(tel).summary()
    summary.to_csv(art.path("telemetry_summary.csv"), art.header())
    print(f"report: {len(groups)} ECDF tables, {len(metric_rows)} metric rows -> {art.dir}")
    return art.finish()


def cmd_audit(cfg, args):
    tel = os.path.join(cfg.out, "evaluate", "telemetry.jsonl")
    art = Artifacts(cfg, "audit")
    filters = {}
    if args.run_id:
        filters["run_id"] = args.run_id
    if args.severity:
        filters["severity"] = args.severity
    if args.constraint:
        filters["constraint"] = args.constraint
    if args.episodes:
        lo, _, hi = args.episodes.partition(":")
        filters["episode_range"] = (int(lo), int(hi or lo))
    store = RecordStore(tel)
    ok, bad = store.verify()
    q = audit_query(store, **filters)
    with open(art.path("records.jsonl"), "w") as fh:
        fh.write(json.dumps({"meta": art.meta()}) + "\n")
        for rec, inc in q:
            fh.write(json.dumps({"record": rec.to_dict(), "severity": inc.severity if inc else None}) + "\n")
    summary = q.summary()
    summary.to_csv(art.path("summary.csv"), art.header())
    art.write_json("audit.json", {"filters": {k: list(v) if isinstance(v, tuple) else v for k, v in filters.items()},
                                  "chain_ok": ok, "first_bad_record": bad, "summary": asdict(summary)})
    print(f"audit: {summary.n_records} records, feasibility={summary.feasibility_rate:.4f}, chain_ok={ok}")
    return art.finish()


HANDLERS = {
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "audit": cmd_audit,
}


def build_parser():
    p = argparse.ArgumentParser(prog="tailsafe", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", help="output directory (default: config 'out' or ./runs)")
    p.add_argument("--jobs", type=int, default=1, help="parallel episode workers")
    p.add_argument("--resume", help="train: checkpoint file to resume from")
    p.add_argument("--resume-latest", action="store_true", help="train: resume from the newest checkpoint in --out")
    p.add_argument("--run-id", help="audit: filter by run id")
    p.add_argument("--severity", choices=("S1", "S2", "S3"), help="audit: filter by incident severity")
    p.add_argument("--constraint", help="audit: filter by constraint tag or row name")
    p.add_argument("--episodes", help="audit: episode range LO:HI")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run_command(command, cfg, args=None):
    args = args or build_parser().parse_args([command])
    return HANDLERS[command](cfg, args)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out)
        run_command(args.command, cfg, args)
    except ConfigError as exc:
        print(f"config error at {exc.key_path or '<root>'}: {exc}", file=sys.stderr)
        return 2
    except (TailSafeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
