from .black import black_call, black_put, bs_delta
from .localvol import LocalVolGrid, extract_local_vol
from .paths import PathSet, VolFactor, simulate_paths
from .ssvi import (
    ArbitrageReport,
    CalibConfig,
    CalibrationResult,
    SsviCalibrator,
    SsviSurface,
    Violation,
    calibrate_ssvi,
    check_no_arbitrage,
    ssvi_total_variance,
)
from .vix import VIX_HORIZON, vix_from_surface

__all__ = [
    "ArbitrageReport",
    "CalibConfig",
    "CalibrationResult",
    "LocalVolGrid",
    "PathSet",
    "SsviCalibrator",
    "SsviSurface",
    "VIX_HORIZON",
    "Violation",
    "VolFactor",
    "black_call",
    "black_put",
    "bs_delta",
    "calibrate_ssvi",
    "check_no_arbitrage",
    "extract_local_vol",
    "simulate_paths",
    "ssvi_total_variance",
    "vix_from_surface",
]
