import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailsafe.exceptions import InputError
from tailsafe.execution import (
    Account,
    BookState,
    CostBreakdown,
    ImpactParams,
    LatencyQueue,
    account_step,
    exec_price,
    lob_fill,
    write_pnl_csv,
)


def book(mid=100.0, spread=0.2, depth=np.inf):
    return BookState.create([mid], spread, depth)


def test_zero_trade_has_only_residue():
    params = ImpactParams([0.01], [0.05, 0.02])
    b = book().advance([4.0], params)
    price, cost = exec_price(b, params, [0.0])
    assert price[0] == pytest.approx(100.0 + 0.02 * 4.0)
    assert cost.spread_cost == 0 and cost.temp_cost == 0


def test_hand_evaluated_price():
    g0 = 0.003
    params = ImpactParams([0.01], [g0, 0.001])
    price, cost = exec_price(book(), params, [10.0])
    assert price[0] == pytest.approx(100 + 0.1 + 0.1 + g0 * 10)
    assert cost.spread_cost == pytest.approx(1.0)
    assert cost.temp_cost == pytest.approx(1.0)
    assert cost.transient_cost == pytest.approx(g0 * 100)
    assert cost.total == pytest.approx((price[0] - 100) * 10)


def test_ring_buffer_transient():
    g0, g1 = 0.5, 0.2
    params = ImpactParams([0.0], [g0, g1])
    b = book(spread=0.0)
    _, _ = exec_price(b, params, [10.0])
    b = b.advance([10.0], params)
    price, _ = exec_price(b, params, [-10.0])
    assert price[0] - 100.0 == pytest.approx(g0 * -10 + g1 * 10)


def test_history_truncated_to_kernel():
    params = ImpactParams.exponential(0.0, 1.0, 0.5, length=4)
    b = book()
    for _ in range(10):
        b = b.advance([1.0], params)
    assert b.impact_history.shape[0] <= params.length


def test_nonfinite_trade():
    with pytest.raises(InputError):
        exec_price(book(), ImpactParams([0.0], [0.0]), [np.nan])


def test_kernel_must_be_nonincreasing():
    with pytest.raises(InputError):
        ImpactParams([0.0], [0.1, 0.2])
    with pytest.raises(InputError):
        ImpactParams([0.0], [-0.1])


def test_account_no_exposure():
    acct = Account.flat(1)
    b0, b1 = book(100.0), book(105.0)
    acct = account_step(acct, b0, b1, [0.0], CostBreakdown(0, 0, 0))
    assert acct.pnl == 0.0


def test_account_recursion():
    acct = Account.flat(1, [5.0])
    acct = account_step(acct, book(100.0), book(102.0), [0.0], 3.0)
    assert acct.pnl == pytest.approx(7.0)
    assert acct.cost_cum == 3.0


def test_do_nothing_episode():
    rng = np.random.default_rng(0)
    acct = Account.flat(1)
    b = book()
    params = ImpactParams([0.01], [0.01])
    for _ in range(50):
        nb = BookState.create(b.mid + rng.normal(size=1), 0.2, np.inf)
        _, cost = exec_price(b, params, [0.0])
        acct = account_step(acct, b, nb, [0.0], cost)
        b = nb
    assert acct.pnl == 0.0 and acct.loss == 0.0


def test_fill_ample_depth():
    res = lob_fill(book(depth=100), [20.0], np.random.default_rng(0))
    assert res.filled[0] == 20.0 and not res.partial[0]


def test_fill_truncates():
    b = BookState([100.0], 0.2, 1000.0, 30.0)
    res = lob_fill(b, [50.0], np.random.default_rng(0))
    assert res.filled[0] == 30.0 and res.partial[0]
    assert res.residual[0] == 20.0


def test_fill_cancel_all():
    b = BookState([100.0], 0.2, 5.0, 5.0)
    for seed in range(20):
        res = lob_fill(b, [-50.0], np.random.default_rng(seed), p_cancel=1.0)
        assert res.filled[0] == -5.0 and res.residual[0] == 0.0


def test_fill_deterministic():
    b = BookState([100.0, 50.0], 0.2, 5.0, 5.0)
    a = lob_fill(b, [9.0, -9.0], np.random.default_rng(3), p_cancel=0.5)
    c = lob_fill(b, [9.0, -9.0], np.random.default_rng(3), p_cancel=0.5)
    assert np.array_equal(a.residual, c.residual)


def test_latency_queue():
    q = LatencyQueue(1, latency=2)
    out = [q.submit([float(i)])[0] for i in range(1, 5)]
    assert out == [0.0, 0.0, 1.0, 2.0]


@settings(max_examples=100, deadline=None)
@given(u=st.floats(-1e3, 1e3), s=st.floats(0, 1), eta=st.floats(0, 0.1), g0=st.floats(0, 0.1))
def test_cost_nonnegative_single_trade(u, s, eta, g0):
    _, cost = exec_price(book(spread=s), ImpactParams([eta], [g0, g0 / 2]), [u])
    assert cost.total >= 0


@settings(max_examples=200, deadline=None)
@given(
    u=st.floats(0.01, 100),
    g0=st.floats(0, 0.1),
    ratio=st.floats(0, 1),
    s=st.floats(0, 0.5),
    eta=st.floats(0, 0.05),
)
def test_round_trip_no_profit(u, g0, ratio, s, eta):
    params = ImpactParams([eta], [g0, g0 * ratio])
    b = book(spread=s)
    _, c1 = exec_price(b, params, [u])
    b = b.advance([u], params)
    _, c2 = exec_price(b, params, [-u])
    # mid unchanged, so round-trip profit is minus total cost
    assert -(c1.total + c2.total) <= 1e-12


def test_pnl_telescopes(tmp_path):
    rng = np.random.default_rng(5)
    params = ImpactParams.exponential([0.01, 0.02], 0.005, 0.3)
    b = BookState.create([100.0, 20.0], [0.1, 0.05], np.inf)
    acct = Account.flat(2)
    qs, dms, costs, rows = [], [], [], []
    for t in range(40):
        u = rng.normal(size=2)
        nb = BookState.create(b.mid + rng.normal(size=2), b.spread, np.inf)
        _, cost = exec_price(b, params, u)
        qs.append(acct.inventory.copy())
        dms.append(nb.mid - b.mid)
        costs.append(cost.total)
        acct = account_step(acct, b, nb, u, cost)
        b = nb.advance(u, params)
        rows.append((t, nb.mid, u, acct.inventory, cost.total, acct.pnl))
    expected = sum(q @ dm for q, dm in zip(qs, dms)) - sum(costs)
    assert acct.pnl == pytest.approx(expected, abs=1e-9)
    write_pnl_csv(tmp_path / "pnl.csv", *zip(*rows))
    assert (tmp_path / "pnl.csv").read_text().startswith("step,mid0,mid1,u0,u1,q0,q1,cost,pnl")
