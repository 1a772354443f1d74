"""Debt and equity pricing under a stochastic delay model of firm value."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import DelayCreditError, InputError, NumericalError
from .market_data import (
    FirmSeries,
    MemoryPath,
    VolatilityModel,
    build_memory_path,
    fit_volatility,
    load_firm_csv,
    resample_coefficients,
)
from .pde import ClaimSpec, build_grid
from .pricing import (
    PricingSurface,
    black_scholes_call,
    solve_merton_surface,
    solve_surface_deterministic,
    solve_surface_stochastic,
)
from .sdde import NoiseStream, SchemeConfig, SddeModel, simulate_merton_path, simulate_path

__all__ = [
    "ClaimSpec",
    "DelayCreditError",
    "FirmSeries",
    "InputError",
    "MemoryPath",
    "NoiseStream",
    "NumericalError",
    "PricingSurface",
    "SchemeConfig",
    "SddeModel",
    "VolatilityModel",
    "black_scholes_call",
    "build_grid",
    "build_memory_path",
    "fit_volatility",
    "load_firm_csv",
    "resample_coefficients",
    "simulate_merton_path",
    "simulate_path",
    "solve_merton_surface",
    "solve_surface_deterministic",
    "solve_surface_stochastic",
]
