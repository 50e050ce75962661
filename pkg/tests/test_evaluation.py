import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailsafe.evaluation import (
    AXES,
    HedgeConfig,
    HedgingEnv,
    Scenario,
    StressConfig,
    ToyCostEnv,
    bh_fdr,
    common_n,
    default_surface,
    ecdf_table,
    gen_scenarios,
    paired_bootstrap_ci,
    perf_ratios,
    run_episode,
    vargha_delaney_a12,
    vix_proxy,
)
from tailsafe.exceptions import ConfigError, InputError
from tailsafe.market import LocalVolGrid, check_no_arbitrage
from tailsafe.safety import CbfQpFilter
from tailsafe.tailrisk import var_es_empirical


def zero_policy(x, rng):
    return np.zeros(2)


@pytest.fixture(scope="module")
def base():
    return Scenario(default_surface())


# scenarios


def test_zero_magnitude_stress_reproduces_id(base):
    sset = gen_scenarios(base, StressConfig(magnitude=0.0), n_per_cell=3, master_seed=7)
    assert sset.cells() == sorted(["ID"] + [f"OOD:{a}" for a in AXES])
    ref = sset.cell("ID")
    for name in sset.cells():
        for s, r in zip(sset.cell(name), ref):
            np.testing.assert_allclose(s.surface.theta, r.surface.theta, rtol=1e-15)
            np.testing.assert_allclose(s.surface.phi, r.surface.phi, rtol=1e-15)
            np.testing.assert_allclose(s.surface.rho, r.surface.rho, rtol=1e-15)
            assert s.corr_regime == r.corr_regime and s.expiry_bucket == r.expiry_bucket
            assert s.seed == r.seed and s.index == r.index
            if s.impact is not None and r.impact is not None:
                np.testing.assert_allclose(s.impact.eta, r.impact.eta)


def test_level_stress_raises_vix(base):
    sset = gen_scenarios(base, StressConfig(level=1.5, axes=("level",)), n_per_cell=1)
    ood = sset.cell("OOD:level")[0]
    assert vix_proxy(ood.surface, 1.0) > vix_proxy(base.surface, 1.0)
    assert ood.label.startswith("OOD:level|")
    assert check_no_arbitrage(ood.surface).ok


def test_seed_lists_identical_across_requests(base):
    a = gen_scenarios(base, n_per_cell=5, master_seed=3)
    b = gen_scenarios(base, n_per_cell=5, master_seed=3)
    assert a.seeds == b.seeds and a.keys() == b.keys()
    for name in a.cells():
        assert [s.seed for s in a.cell(name)] == a.seeds
    assert gen_scenarios(base, n_per_cell=5, master_seed=4).seeds != a.seeds


def test_arbitrage_breaking_cell_rejected(base):
    # theta * phi * (1 + |rho|) > 4 breaks the butterfly condition
    sset = gen_scenarios(base, StressConfig(curvature=40.0, axes=("curvature", "level")), n_per_cell=2)
    assert "OOD:curvature" in sset.rejected and not sset.rejected["OOD:curvature"].ok
    assert "OOD:curvature" not in sset.cells() and "OOD:level" in sset.cells()


# episodes


def test_inert_episode_has_zero_loss():
    # constant spot and vol level, no liability, no trades
    cfg = HedgeConfig(notional=0.0, vol_of_vol=0.0, n_steps=10)
    sc = Scenario(default_surface(), local_vol=LocalVolGrid.constant(0.0, 1.0), seed=5)
    res = run_episode(sc, zero_policy, config=cfg)
    assert res.loss_T == -res.pnl_T
    assert res.loss_T == 0.0 and res.cost_total == 0.0
    assert res.n_steps == 10 and res.intercepts == 0


def test_huge_trades_hit_box_every_step():
    sc = Scenario(default_surface(), seed=2)
    cfg = HedgeConfig(u_max=(0.1, 0.1), gate=False, b_max=1e6, n_steps=8)  # band never binds
    res = run_episode(sc, lambda x, rng: np.array([50.0, -50.0]), config=cfg, keep_audit=True)
    assert res.intercepts == res.n_steps == 8
    assert res.tightest_hist == {"BOX": 8}
    for a in res.audit:
        np.testing.assert_allclose(a.u_safe, [0.1, -0.1], atol=1e-6)


def test_episode_determinism_and_dimension_check():
    sc = Scenario(default_surface(), seed=11)
    pol = lambda x, rng: rng.normal(size=2)  # noqa: E731
    r1 = run_episode(sc, pol, policy_seed=3, collect=True)
    r2 = run_episode(sc, pol, policy_seed=3, collect=True)
    assert r1.pnl_T == r2.pnl_T and r1.cost_total == r2.cost_total
    np.testing.assert_array_equal(r1.trajectory.U_safe, r2.trajectory.U_safe)
    np.testing.assert_array_equal(r1.step_losses, r2.step_losses)
    with pytest.raises(ConfigError):
        run_episode(sc, pol, filt=CbfQpFilter(params=ToyCostEnv().params))


def test_step_losses_sum_to_terminal_loss():
    sc = Scenario(default_surface(), seed=4)
    res = run_episode(sc, lambda x, rng: rng.normal(size=2), policy_seed=1)
    assert res.step_losses.sum() == pytest.approx(res.loss_T, abs=1e-9)
    toy = run_episode(ToyCostEnv(seed=3), lambda x, rng: np.array([0.3]))
    assert toy.step_losses.sum() == pytest.approx(toy.loss_T, abs=1e-9)


def test_hedged_start_tracks_target():
    env = HedgingEnv(Scenario(default_surface(), seed=1))
    A, d = env.exposure()
    assert np.linalg.norm(d) < 1e-9
    assert env.features().shape == (HedgingEnv.d,)


# performance ratios


def test_perf_ratios_examples():
    sharpe, _, _ = perf_ratios([1.0, -1.0] * 5)
    assert sharpe == 0.0
    assert perf_ratios([0.0, 1.0, 2.0])[2] is None
    x = [2.0, -1.0, 3.0, -2.0, 1.0]
    mean = sum(x) / 5
    sd = (sum((v - mean) ** 2 for v in x) / 4) ** 0.5
    down = (sum(min(v, 0) ** 2 for v in x) / 5) ** 0.5
    omega = sum(max(v, 0) for v in x) / sum(max(-v, 0) for v in x)
    s, so, om = perf_ratios(x)
    assert abs(s - mean / sd) < 1e-12 and abs(so - mean / down) < 1e-12 and abs(om - omega) < 1e-12
    with pytest.raises(InputError):
        perf_ratios([1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=30))
def test_omega_equals_partial_moment_ratio(x):
    x = np.array(x)
    om = perf_ratios(x)[2]
    lower = np.maximum(-x, 0).mean()
    if lower <= 0:
        assert om is None
    else:
        assert om == pytest.approx(np.maximum(x, 0).mean() / lower, rel=1e-9, abs=1e-12)


# bootstrap


def test_bootstrap_identical_and_shift():
    rng = np.random.default_rng(0)
    widths = []
    for n in (20, 200):
        a = rng.normal(size=n)
        pt, lo, hi = paired_bootstrap_ci(a, a.copy(), B_reps=1000)
        assert pt == 0 and lo <= 0 <= hi
        widths.append(hi - lo)
        pt, lo, hi = paired_bootstrap_ci(a, a + 1, B_reps=1000)
        assert pt == pytest.approx(1) and lo == pytest.approx(1) and hi == pytest.approx(1)
    assert widths[1] <= widths[0]


def test_bootstrap_deterministic_and_stratified():
    rng = np.random.default_rng(1)
    a = {(s, p): rng.normal() for s in range(4) for p in range(5)}
    b = {k: v + rng.normal(0.3) for k, v in a.items()}
    r1 = paired_bootstrap_ci(a, b, seed=9)
    assert r1 == paired_bootstrap_ci(a, b, seed=9)
    with pytest.raises(InputError):
        paired_bootstrap_ci(a, {k: v for k, v in list(b.items())[1:]})
    with pytest.raises(InputError):
        paired_bootstrap_ci([1, 2], [1, 2], B_reps=500)
    # unequal strata take the loop path and still bracket the point estimate
    c = {k: v for k, v in a.items() if k != (0, 0)}
    d = {k: b[k] for k in c}
    pt, lo, hi = paired_bootstrap_ci(c, d, seed=2, B_reps=1000)
    assert lo <= pt <= hi


def test_bootstrap_coverage_on_gaussian_shift():
    rng = np.random.default_rng(2)
    hits = 0
    reps = 500
    for r in range(reps):
        a = rng.normal(size=100)
        b = a + 0.5 + rng.normal(size=100)
        _, lo, hi = paired_bootstrap_ci(a, b, B_reps=1000, seed=r)
        hits += lo <= 0.5 <= hi
    assert 0.93 * reps <= hits <= 0.97 * reps


def test_common_n_downsamples_per_seed():
    a = {(0, 0): 1.0, (0, 1): 2.0, (0, 2): 3.0, (1, 0): 4.0}
    b = {(0, 0): 5.0, (0, 1): 6.0, (1, 0): 7.0, (1, 1): 8.0, (2, 0): 9.0}
    xa, xb, strata = common_n(a, b)
    np.testing.assert_array_equal(xa, [1, 2, 4])
    np.testing.assert_array_equal(xb, [5, 6, 7])
    np.testing.assert_array_equal(strata, [0, 0, 1])


# multiple testing and effect size


def test_bh_examples():
    rej, adj = bh_fdr([1.0, 1.0, 1.0])
    assert not rej.any() and np.all(adj == 1.0)
    rej, _ = bh_fdr([0.01, 0.02, 0.03, 0.5], 0.05)
    assert rej.tolist() == [True, True, True, False]
    assert bh_fdr([0.04], 0.05)[0].tolist() == [True]
    # input order preserved; adjusted values monotone in the raw order
    rej, adj = bh_fdr([0.5, 0.03, 0.01, 0.02], 0.05)
    assert rej.tolist() == [False, True, True, True]
    np.testing.assert_allclose(adj, [0.5, 0.04, 0.04, 0.04])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_bh_adjusted_monotone(p):
    p = np.array(p)
    _, adj = bh_fdr(p)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(adj[order]) >= -1e-15)
    assert np.all(adj >= p - 1e-15) and np.all(adj <= 1)


def test_a12_examples():
    assert vargha_delaney_a12([1, 2, 3], [3, 1, 2]) == 0.5
    assert vargha_delaney_a12([5, 6], [1, 2, 3]) == 1.0
    # pairs (1,2) (1,3) (2,2) (2,3): one tie, no wins
    assert vargha_delaney_a12([1, 2], [2, 3]) == 0.125
    assert vargha_delaney_a12([2, 3], [1, 2]) == 0.875


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=1, max_size=10, unique=True), st.integers(1, 10))
def test_a12_symmetry_and_brute_force(vals, k):
    k = min(k, len(vals) - 1) if len(vals) > 1 else 0
    a, b = (vals[:k], vals[k:]) if k else (vals, [v + 0.5 for v in vals])
    brute = sum((x > y) + 0.5 * (x == y) for x in a for y in b) / (len(a) * len(b))
    assert vargha_delaney_a12(a, b) == pytest.approx(brute)
    assert vargha_delaney_a12(a, b) + vargha_delaney_a12(b, a) == pytest.approx(1.0)


# ECDF


def test_ecdf_examples(tmp_path):
    t = ecdf_table([4.2], alphas=())
    assert t.rows == [(4.2, 1.0)]
    x = np.random.default_rng(3).normal(size=200)
    t = ecdf_table(x)
    srt = np.sort(x)
    for k, (v, f) in enumerate(t.rows, 1):
        assert v == srt[k - 1] and f == k / 200
    labels = {lab: v for lab, v, _ in t.annotations}
    for a in (0.01, 0.025, 0.05):
        var, es = var_es_empirical(x, 1 - a)
        assert labels[f"VaR_{a:g}"] == var and labels[f"ES_{a:g}"] == es
    path = tmp_path / "ecdf.csv"
    t.to_csv(path, header_lines=["run_id=r1"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# run_id=r1"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["value", "ecdf", "annotation"] and len(rows) == 1 + 200 + 6


def test_ecdf_ties_right_continuous():
    t = ecdf_table([1.0, 1.0, 2.0, 3.0], alphas=())
    assert t.rows == [(1.0, 0.5), (2.0, 0.75), (3.0, 1.0)]


def test_inert_book_features_finite():
    env = HedgingEnv(Scenario(default_surface(), seed=1), config=HedgeConfig(notional=0.0))
    assert np.all(np.isfinite(env.features()))
