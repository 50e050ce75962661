from .env import HedgeConfig, HedgingEnv, Scenario, ToyConfig, ToyCostEnv, default_impact, default_surface, vix_proxy
from .episode import EpisodeResult, StepAudit, Trajectory, make_env, run_episode
from .scenarios import AXES, ScenarioSet, StressConfig, gen_scenarios, path_seed
from .stats import EcdfTable, bh_fdr, common_n, ecdf_table, paired_bootstrap_ci, perf_ratios, vargha_delaney_a12

__all__ = [
    "AXES",
    "EcdfTable",
    "EpisodeResult",
    "HedgeConfig",
    "HedgingEnv",
    "Scenario",
    "ScenarioSet",
    "StepAudit",
    "StressConfig",
    "ToyConfig",
    "ToyCostEnv",
    "Trajectory",
    "bh_fdr",
    "common_n",
    "default_impact",
    "default_surface",
    "ecdf_table",
    "gen_scenarios",
    "make_env",
    "paired_bootstrap_ci",
    "path_seed",
    "perf_ratios",
    "run_episode",
    "vargha_delaney_a12",
    "vix_proxy",
]
