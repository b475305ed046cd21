"""Walk-forward backtesting, strategies and performance metrics."""

from .engine import BacktestError, BacktestNumericalError, BacktestResult, mpp_error_panel, run_backtest, wealth_path
from .forecast import ForecastError, ForecastPanel, forecast_panel, walk_forward
from .metrics import portfolio_r2, r2_oos, rolling_r2, sharpe_ratio, summary_metrics, turnover
from .schedule import Schedule
from .strategies import (
    StrategyKind,
    StrategySpec,
    decile_members,
    decile_portfolios,
    mpp_forecasts,
    timing_weight,
)

__all__ = [
    "BacktestError",
    "BacktestNumericalError",
    "BacktestResult",
    "ForecastError",
    "ForecastPanel",
    "Schedule",
    "StrategyKind",
    "StrategySpec",
    "decile_members",
    "decile_portfolios",
    "forecast_panel",
    "mpp_error_panel",
    "mpp_forecasts",
    "portfolio_r2",
    "r2_oos",
    "rolling_r2",
    "run_backtest",
    "sharpe_ratio",
    "summary_metrics",
    "timing_weight",
    "turnover",
    "walk_forward",
    "wealth_path",
]
