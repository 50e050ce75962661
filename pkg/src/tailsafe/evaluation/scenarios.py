"""ID scenario cell plus one OOD cell per stress axis, with shared path seeds."""

from dataclasses import dataclass, field, replace

import numpy as np

from ..execution import ImpactParams
from ..market import check_no_arbitrage
from .env import CORR_TAGS, Scenario, default_impact

AXES = ("level", "slope", "curvature", "corr", "impact", "expiry")


@dataclass(frozen=True)
class StressConfig:
    level: float = 1.5  # theta multiplier
    slope: float = -0.2  # rho shift
    curvature: float = 1.3  # phi multiplier
    corr: str = "stressed"
    impact: float = 2.0  # eta and kernel multiplier
    expiry: str = "short"
    magnitude: float = 1.0  # 0 reproduces the ID cell on every axis
    axes: tuple = AXES


@dataclass
class ScenarioSet:
    scenarios: list
    seeds: list  # path seed per index, shared by every cell and method
    rejected: dict = field(default_factory=dict)

    def cells(self):
        return sorted({s.cell for s in self.scenarios})

    def cell(self, name):
        return [s for s in self.scenarios if s.cell == name]

    def keys(self):
        return [(s.cell, s.index) for s in self.scenarios]


def path_seed(master_seed, index):
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


def _perturb(base, axis, stress):
    g = stress.magnitude
    surf = base.surface
    if axis == "level":
        return replace(base, surface=surf.scaled(level=stress.level**g)), f"theta x{stress.level**g:.4g}"
    if axis == "slope":
        return replace(base, surface=surf.scaled(rho_shift=stress.slope * g)), f"rho {stress.slope * g:+.4g}"
    if axis == "curvature":
        return replace(base, surface=surf.scaled(phi_mult=stress.curvature**g)), f"phi x{stress.curvature**g:.4g}"
    if axis == "corr":
        corr = base.corr_regime + g * (CORR_TAGS[stress.corr] - base.corr_regime)
        return replace(base, corr_regime=float(corr)), f"corr {corr:+.4g}"
    if axis == "impact":
        imp = base.impact or default_impact()
        k = stress.impact**g
        return replace(base, impact=ImpactParams(imp.eta * k, imp.kernel * k, imp.latency_steps)), f"impact x{k:.4g}"
    if axis == "expiry":
        bucket = stress.expiry if g > 0 else base.expiry_bucket
        return replace(base, expiry_bucket=bucket), f"expiry {bucket}"
    raise ValueError(f"unknown stress axis {axis!r}")


def gen_scenarios(base, stress=None, n_per_cell=10, master_seed=0):
    """The ID cell and one OOD cell per axis; index i uses the same path seed in every cell.

    Cells whose perturbed surface fails the static-arbitrage probe are dropped
    and listed in ``rejected`` with the report.
    """
    stress = stress or StressConfig()
    seeds = [path_seed(master_seed, i) for i in range(n_per_cell)]
    out, rejected = [], {}
    cells = [("ID", base, "ID")]
    for axis in stress.axes:
        cell, desc = _perturb(base, axis, stress)
        cells.append((f"OOD:{axis}", cell, desc))
    for name, cell, desc in cells:
        report = check_no_arbitrage(cell.surface)
        if not report.ok:
            rejected[name] = report
            continue
        label = name if name == "ID" else f"{name}|{desc}"
        out += [replace(cell, seed=s, label=label, index=i) for i, s in enumerate(seeds)]
    return ScenarioSet(out, seeds, rejected)
