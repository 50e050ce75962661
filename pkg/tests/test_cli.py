import json
import os

import numpy as np
import pytest
import yaml

from tailsafe.cli import fingerprint, load_config, main
from tailsafe.exceptions import ConfigError

SMALL = {
    "seed": 5,
    "evaluation": {"n_per_cell": 3, "n_steps": 4, "B_reps": 1000, "stress": {"axes": ["level", "corr"]}},
    "learner": {"train": {"iterations": 2, "episodes_per_iter": 2, "hidden": [6], "critic_steps": 2, "K": 16}},
}


def write_cfg(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_fingerprint_stable_under_reordering(tmp_path):
    a = write_cfg(tmp_path, {"seed": 1, "evaluation": {"n_steps": 4, "n_per_cell": 3}}, "a.yaml")
    (tmp_path / "b.yaml").write_text("evaluation:\n  n_per_cell: 3\n  n_steps: 4\nseed: 1\n")
    assert load_config(a).fingerprint == load_config(str(tmp_path / "b.yaml")).fingerprint
    assert load_config(a, seed=2).fingerprint != load_config(a).fingerprint
    assert fingerprint({"x": 1, "y": [1, 2]}) == fingerprint({"y": [1, 2], "x": 1})


@pytest.mark.parametrize(
    "doc, key",
    [
        ({"evaluation": {"nper": 3}}, "evaluation.nper"),
        ({"learner": {"train": {"hiden": [4]}}}, "learner.train.hiden"),
        ({"tailrisk": {"alpha_start": 0.01, "alpha_target": 0.05}}, "tailrisk"),
        ({"evaluation": {"methods": ["hold", "magic"]}}, "evaluation.methods"),
        ({"safety": {"r_max": 1.0, "bogus": 1}}, "safety.bogus"),
        ({"bogus": 1}, "bogus"),
    ],
)
def test_invalid_config_names_key(tmp_path, capsys, doc, key):
    path = write_cfg(tmp_path, doc)
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert err.value.key_path == key
    assert main(["evaluate", "--config", path, "--out", str(tmp_path / "o")]) == 2
    assert key in capsys.readouterr().err


def test_report_on_empty_directory(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path / "empty")]) == 0
    assert "no results" in capsys.readouterr().out


def test_train_zero_steps_writes_initial_checkpoint(tmp_path):
    doc = {**SMALL, "learner": {"train": {"iterations": 0, "hidden": [4]}}}
    out = tmp_path / "o"
    assert main(["train", "--config", write_cfg(tmp_path, doc), "--out", str(out)]) == 0
    assert sorted(os.listdir(out / "train")) == ["ckpt_000000.npz", "train_log.jsonl"]
    with np.load(out / "train" / "ckpt_000000.npz") as z:
        meta = json.loads(str(z["meta"]))
    assert meta["step"] == 0 and meta["fingerprint"] == load_config(write_cfg(tmp_path, doc)).fingerprint


def test_resumed_training_matches_uninterrupted(tmp_path):
    doc = {**SMALL, "learner": {**SMALL["learner"], "checkpoint_every": 1}}
    path = write_cfg(tmp_path, doc)
    full, part = tmp_path / "full", tmp_path / "part"
    assert main(["train", "--config", path, "--out", str(full)]) == 0
    # restart from the step-1 checkpoint as if the first run had stopped there
    assert main(["train", "--config", path, "--out", str(part), "--resume", str(full / "train" / "ckpt_000001.npz")]) == 0
    assert not (part / "train" / "ckpt_000000.npz").exists()
    with np.load(full / "train" / "ckpt_000002.npz") as a, np.load(part / "train" / "ckpt_000002.npz") as b:
        keys = [k for k in a.files if k != "meta"]
        assert keys == [k for k in b.files if k != "meta"]
        for k in keys:
            np.testing.assert_array_equal(a[k], b[k])
        ma, mb = json.loads(str(a["meta"])), json.loads(str(b["meta"]))
        assert ma["ctrl"] == mb["ctrl"] and ma["kl_history"] == mb["kl_history"]


def _strip_timing(path):
    rows = [json.loads(ln) for ln in path.read_text().splitlines()]
    for r in rows:
        r.pop("timestamp")
        r.pop("solver_time_ms")
    return rows


def test_evaluate_deterministic_and_artifacts(tmp_path):
    path = write_cfg(tmp_path, SMALL)
    outs = [tmp_path / "a", tmp_path / "b"]
    assert main(["evaluate", "--config", path, "--out", str(outs[0])]) == 0
    assert main(["evaluate", "--config", path, "--out", str(outs[1]), "--jobs", "2"]) == 0
    for name in ("statistics.json", "episodes.csv"):
        assert (outs[0] / "evaluate" / name).read_bytes() == (outs[1] / "evaluate" / name).read_bytes()
    # telemetry differs only in wall-clock fields
    assert _strip_timing(outs[0] / "evaluate" / "telemetry.jsonl") == _strip_timing(outs[1] / "evaluate" / "telemetry.jsonl")
    st = json.loads((outs[0] / "evaluate" / "statistics.json").read_text())
    cfg = load_config(path)
    assert st["fingerprint"] == cfg.fingerprint and st["run_id"].startswith("evaluate-")
    assert st["cells"] == ["ID", "OOD:corr", "OOD:level"]
    deltas = [r for r in st["results"] if r["metric"] == "delta_mean_loss"]
    assert len(deltas) == 3 and all(r["ci_low"] <= r["point"] <= r["ci_high"] for r in deltas)
    assert all(0 <= r["p_adj"] <= 1 and 0 <= r["a12"] <= 1 for r in deltas)
    # paired seeds: both methods ran every (cell, index) with the same path seed
    lines = [ln for ln in (outs[0] / "evaluate" / "episodes.csv").read_text().splitlines() if not ln.startswith("#")][1:]
    by_method = {}
    for ln in lines:
        method, cell, index, seed = ln.split(",")[:4]
        by_method.setdefault(method, []).append((cell, index, seed))
    assert by_method["hold"] == by_method["noise"] and len(by_method["hold"]) == 9

    assert main(["report", "--config", path, "--out", str(outs[0])]) == 0
    rep = outs[0] / "report"
    assert (rep / "metrics.csv").read_text().startswith(f"# run_id=report-{cfg.fingerprint[:12]}")
    assert (rep / "ecdf_hold_ID.csv").exists() and "fingerprint=" in (rep / "telemetry_summary.csv").read_text()

    assert main(["audit", "--config", path, "--out", str(outs[0]), "--severity", "S1"]) == 0
    audit = json.loads((outs[0] / "audit" / "audit.json").read_text())
    assert audit["chain_ok"] and audit["filters"] == {"severity": "S1"}
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    assert [r["command"] for r in manifest["runs"]] == ["evaluate", "report", "audit"]
    assert all(len(a["sha256"]) == 64 for r in manifest["runs"] for a in r["artifacts"])


def test_calibrate_and_simulate(tmp_path):
    path = write_cfg(tmp_path, {**SMALL, "market": {"quote_noise": 0.0}})
    out = tmp_path / "o"
    assert main(["calibrate", "--config", path, "--out", str(out)]) == 0
    rep = json.loads((out / "calibrate" / "arbitrage_report.json").read_text())
    assert rep["ok"] and rep["n_quotes"] == 55
    # the calibrated surface feeds the next command through market.surface
    doc = {**SMALL, "market": {"surface": str(out / "calibrate" / "surface.yaml")}}
    assert main(["simulate", "--config", write_cfg(tmp_path, doc, "sim.yaml"), "--out", str(out)]) == 0
    paths = [ln for ln in (out / "simulate" / "paths.csv").read_text().splitlines() if not ln.startswith("#")]
    assert len(paths) == 1 + 9 * 5


def test_policy_method_needs_checkpoint(tmp_path, capsys):
    doc = {**SMALL, "evaluation": {**SMALL["evaluation"], "methods": ["hold", "policy"]}}
    assert main(["evaluate", "--config", write_cfg(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2
    assert "evaluation.checkpoint" in capsys.readouterr().err


def test_trained_hedge_policy_evaluates(tmp_path):
    doc = {
        **SMALL,
        "learner": {"env": "hedge", "train": {"iterations": 1, "episodes_per_iter": 2, "hidden": [6], "critic_steps": 1, "K": 16}},
        "evaluation": {**SMALL["evaluation"], "methods": ["hold", "policy"]},
    }
    path = write_cfg(tmp_path, doc)
    out = str(tmp_path / "o")
    assert main(["train", "--config", path, "--out", out]) == 0
    assert main(["evaluate", "--config", path, "--out", out]) == 0
    st = json.loads((tmp_path / "o" / "evaluate" / "statistics.json").read_text())
    assert st["methods"] == ["hold", "policy"]
