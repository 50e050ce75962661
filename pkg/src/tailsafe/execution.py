"""LOB-lite execution: spread, temporary and transient impact, inventory and P&L."""

import csv
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import as_finite_array, as_vector
from .exceptions import InputError

DEFAULT_KERNEL_LENGTH = 32


def _sgn(x):
    return np.sign(x)  # sign(0) == 0: zero trades pay no spread


@dataclass(frozen=True)
class ImpactParams:
    eta: np.ndarray
    kernel: np.ndarray  # G(0..J-1), shape (J,) or (J, n)
    latency_steps: int = 0

    def __post_init__(self):
        eta = as_finite_array(np.atleast_1d(self.eta), "eta", ndim=1)
        kernel = as_finite_array(self.kernel, "kernel")
        if kernel.ndim == 1:
            kernel = kernel[:, None]
        if kernel.ndim != 2 or kernel.shape[0] < 1:
            raise InputError("kernel must be (J,) or (J, n)")
        if np.any(eta < 0):
            raise InputError("eta must be nonnegative")
        if np.any(kernel < 0) or np.any(np.diff(kernel, axis=0) > 0):
            raise InputError("kernel must be nonnegative and nonincreasing")
        if int(self.latency_steps) != self.latency_steps or self.latency_steps < 0:
            raise InputError("latency_steps must be a nonnegative integer")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "kernel", kernel)

    @property
    def length(self):
        return self.kernel.shape[0]

    @classmethod
    def exponential(cls, eta, g0, decay, length=DEFAULT_KERNEL_LENGTH, latency_steps=0):
        """G(j) = g0 * exp(-decay * j), truncated at ``length`` steps."""
        return cls(np.atleast_1d(eta), g0 * np.exp(-decay * np.arange(length)), latency_steps)


@dataclass(frozen=True)
class BookState:
    mid: np.ndarray
    spread: np.ndarray
    depth_bid: np.ndarray
    depth_ask: np.ndarray
    # row j-1 holds u_{t-j}; most recent first
    impact_history: np.ndarray = None

    def __post_init__(self):
        mid = as_finite_array(np.atleast_1d(self.mid), "mid", ndim=1)
        n = mid.size
        spread = np.broadcast_to(as_finite_array(self.spread, "spread"), (n,)).astype(float)
        # infinite depth is allowed and means "no size cap"
        bid = np.broadcast_to(np.asarray(self.depth_bid, float), (n,)).copy()
        ask = np.broadcast_to(np.asarray(self.depth_ask, float), (n,)).copy()
        if np.isnan(bid).any() or np.isnan(ask).any():
            raise InputError("depth contains NaN")
        if np.any(spread < 0) or np.any(bid < 0) or np.any(ask < 0):
            raise InputError("spread and depth must be nonnegative")
        hist = np.zeros((0, n)) if self.impact_history is None else as_finite_array(self.impact_history, "impact_history", ndim=2)
        if hist.shape[1] != n:
            raise InputError("impact_history width must match instrument count")
        for name, arr in (("mid", mid), ("spread", spread), ("depth_bid", bid), ("depth_ask", ask), ("impact_history", hist)):
            object.__setattr__(self, name, arr)

    @classmethod
    def create(cls, mid, spread=0.0, depth=np.inf):
        return cls(mid, spread, depth, depth)

    @property
    def n(self):
        return self.mid.size

    def transient_residue(self, params):
        """Sum_{j>=1} G(j) u_{t-j}: the impact left by past trades."""
        j = min(self.impact_history.shape[0], params.length - 1)
        if j == 0:
            return np.zeros(self.n)
        return np.sum(params.kernel[1 : j + 1] * self.impact_history[:j], axis=0)

    def advance(self, u, params, mid=None, spread=None):
        """Push the executed trade into the history and move the book."""
        u = as_vector(u, "u", self.n)
        hist = np.vstack([u[None, :], self.impact_history])[: max(params.length - 1, 0)]
        return replace(
            self,
            mid=self.mid if mid is None else mid,
            spread=self.spread if spread is None else spread,
            impact_history=hist,
        )


@dataclass
class CostBreakdown:
    spread_cost: float
    temp_cost: float
    transient_cost: float
    filled: np.ndarray = None
    partial: np.ndarray = None

    @property
    def total(self):
        return self.spread_cost + self.temp_cost + self.transient_cost


def exec_price(book, params, u):
    """Execution price per instrument and the cost split of trade ``u``.

    p = m + (s/2) sgn(u) + eta u + sum_j G(j) u_{t-j} with G(0) acting on the
    current trade. Size beyond the displayed depth is truncated.
    """
    u = as_vector(u, "u", book.n)
    cap = np.where(u >= 0, book.depth_ask, book.depth_bid)
    filled = _sgn(u) * np.minimum(np.abs(u), cap)
    partial = np.abs(filled) < np.abs(u)
    g0 = params.kernel[0]
    transient = g0 * filled + book.transient_residue(params)
    price = book.mid + 0.5 * book.spread * _sgn(filled) + params.eta * filled + transient
    cost = CostBreakdown(
        spread_cost=float(np.sum(0.5 * book.spread * np.abs(filled))),
        temp_cost=float(np.sum(params.eta * filled**2)),
        transient_cost=float(np.sum(transient * filled)),
        filled=filled,
        partial=partial,
    )
    return price, cost


@dataclass
class Account:
    inventory: np.ndarray
    cash: float = 0.0
    pnl_path: list = field(default_factory=lambda: [0.0])
    cost_cum: float = 0.0

    @classmethod
    def flat(cls, n, inventory=None):
        q = np.zeros(n) if inventory is None else as_vector(inventory, "inventory", n)
        return cls(q.astype(float))

    @property
    def pnl(self):
        return self.pnl_path[-1]

    @property
    def loss(self):
        return -self.pnl_path[-1]


def account_step(acct, book_before, book_after, u, cost):
    """Apply one step of dPi = q_t . dm - Cost(u_t), then q += u."""
    u = as_vector(u, "u", book_before.n)
    if book_after.n != book_before.n:
        raise InputError("books must share instruments")
    total = cost.total if isinstance(cost, CostBreakdown) else float(cost)
    d_mid = book_after.mid - book_before.mid
    d_pnl = float(acct.inventory @ d_mid) - total
    return Account(
        inventory=acct.inventory + u,
        cash=acct.cash - float(book_after.mid @ u) - total,
        pnl_path=acct.pnl_path + [acct.pnl_path[-1] + d_pnl],
        cost_cum=acct.cost_cum + total,
    )


@dataclass
class FillResult:
    filled: np.ndarray
    partial: np.ndarray
    residual: np.ndarray  # carried to the next step unless cancelled


def lob_fill(book, u, rng, p_cancel=0.0):
    """Fill up to displayed depth; the remainder is cancelled with probability ``p_cancel``."""
    u = as_vector(u, "u", book.n)
    cap = np.where(u >= 0, book.depth_ask, book.depth_bid)
    filled = _sgn(u) * np.minimum(np.abs(u), cap)
    partial = np.abs(filled) < np.abs(u)
    rest = u - filled
    cancel = rng.random(book.n) < p_cancel
    residual = np.where(partial & ~cancel, rest, 0.0)
    return FillResult(filled, partial, residual)


class LatencyQueue:
    """Fixed integer delay on orders; the first ``latency`` releases are zero."""

    def __init__(self, n, latency=0):
        self.n = n
        self.latency = int(latency)
        self._queue = deque(np.zeros(n) for _ in range(self.latency))

    def submit(self, u):
        if self.latency == 0:
            return np.asarray(u, float)
        self._queue.append(np.asarray(u, float))
        return self._queue.popleft()


def write_pnl_csv(path, steps, mids, trades, inventories, costs, pnls):
    mids, trades, inventories = (np.atleast_2d(np.asarray(a, float)) for a in (mids, trades, inventories))
    n = mids.shape[1]
    header = ["step"] + [f"mid{i}" for i in range(n)] + [f"u{i}" for i in range(n)] + [f"q{i}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header + ["cost", "pnl"])
        for row in zip(steps, mids, trades, inventories, costs, pnls):
            writer.writerow([row[0], *row[1], *row[2], *row[3], row[4], row[5]])
