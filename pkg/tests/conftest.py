import numpy as np
import pytest

from tailsafe.market import SsviSurface


@pytest.fixture
def skew_surface():
    return SsviSurface([0.25, 0.5, 1.0], [0.01, 0.02, 0.04], [1.2, 1.0, 0.8], [-0.4, -0.3, -0.2])


@pytest.fixture
def flat_surface():
    mats = np.array([0.05, 0.5, 1.0])
    return SsviSurface(mats, 0.04 * mats, [1e-8] * 3, [0.0] * 3)


def quotes_from(surface, ks=np.linspace(-0.8, 0.8, 15)):
    rows = [(k, t, surface.implied_vol(k, t), 1.0) for t in surface.maturities for k in ks]
    return np.array(rows)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance as acc

    if not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(acc.NAMES):
        if k in acc.RESULTS:
            ok, msg = acc.RESULTS[k]
            terminalreporter.write_line(f"CRITERION {k:2d} {acc.NAMES[k]}: {'PASS' if ok else 'FAIL'} {msg}")
        else:
            terminalreporter.write_line(f"CRITERION {k:2d} {acc.NAMES[k]}: NOT RUN")
