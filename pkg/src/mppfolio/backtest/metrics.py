"""Forecast accuracy and performance statistics."""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import ArrayLike, NDArray

MONTHS_PER_YEAR = 12


def r2_oos(actual: ArrayLike, predicted: ArrayLike) -> float:
    """Out-of-sample R-squared against a zero forecast: ``1 - sum (r - f)^2 / sum r^2``."""
    r = np.asarray(actual, dtype=np.float64).reshape(-1)
    f = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if r.size != f.size or r.size == 0:
        raise ValueError(f"actual ({r.size}) and predicted ({f.size}) must have equal nonzero length")
    den = float(r @ r)
    if den <= 0.0:
        raise ValueError("zero denominator: all actual values are zero")
    d = r - f
    return 1.0 - float(d @ d) / den


def portfolio_r2(returns: ArrayLike, forecasts: ArrayLike) -> float:
    """Portfolio-level R-squared ``1 - sum e^2 / sum r^2``, NaN when undefined."""
    r = np.asarray(returns, float)
    f = np.asarray(forecasts, float)
    ok = np.isfinite(r) & np.isfinite(f)
    den = float(r[ok] @ r[ok])
    if not ok.any() or den <= 0.0:
        return math.nan
    e = r[ok] - f[ok]
    return 1.0 - float(e @ e) / den


def rolling_r2(returns: ArrayLike, forecasts: ArrayLike, window: int = 36) -> NDArray[np.float64]:
    """Trailing-window portfolio R-squared; NaN until ``window`` months exist."""
    r = np.asarray(returns, float)
    f = np.asarray(forecasts, float)
    out = np.full(r.size, np.nan)
    for t in range(window - 1, r.size):
        out[t] = portfolio_r2(r[t - window + 1 : t + 1], f[t - window + 1 : t + 1])
    return out


def sharpe_ratio(annual_return: float, annual_risk_free: float, annual_stdev: float) -> float | None:
    """Excess-return Sharpe ratio from annualized figures; ``None`` when stdev is zero."""
    if not annual_stdev > 0:
        return None
    return (annual_return - annual_risk_free) / annual_stdev


def turnover(weights: ArrayLike, asset_returns: ArrayLike, portfolio_returns: ArrayLike) -> float | None:
    """Average monthly one-sided L1 trade after drift, in percent.

    The trade into month ``t`` is ``sum_i |w[t, i] - w[t-1, i] (1 + r[t-1, i]) / (1 + rp[t-1])|``,
    i.e. the target weights minus the weights the previous allocation
    drifted to over the month it was held. ``None`` with fewer than two months.
    """
    w = np.asarray(weights, float)
    if w.ndim != 2 or w.shape[0] < 2:
        return None
    r = np.where(w != 0.0, np.nan_to_num(np.asarray(asset_returns, float)), 0.0)
    rp = np.asarray(portfolio_returns, float)
    drifted = w[:-1] * (1.0 + r[:-1]) / (1.0 + rp[:-1, None])
    trades = np.abs(w[1:] - drifted).sum(axis=1)
    return 100.0 * float(trades.mean())


def summary_metrics(
    monthly_returns: ArrayLike,
    risk_free: ArrayLike,
    monthly_weights: ArrayLike | None = None,
    asset_returns: ArrayLike | None = None,
) -> dict[str, float]:
    """Annualized return, standard deviation (both percent), Sharpe ratio and turnover.

    Keys whose value is undefined (zero volatility, no weights) are left out.

    Raises
    ------
    ValueError
        With fewer than two months or misaligned series.
    """
    r = np.asarray(monthly_returns, float)
    rf = np.asarray(risk_free, float)
    if r.size < 2:
        raise ValueError("need at least 2 months of returns")
    if rf.shape != r.shape:
        raise ValueError("risk_free must align with monthly_returns")
    ann_ret = 100.0 * MONTHS_PER_YEAR * float(r.mean())
    ann_sd = 100.0 * math.sqrt(MONTHS_PER_YEAR) * float(r.std(ddof=1))
    if ann_sd < 1e-12 * max(1.0, abs(ann_ret)):
        ann_sd = 0.0
    out = {"annual_return": ann_ret, "annual_stdev": ann_sd}
    s = sharpe_ratio(ann_ret, 100.0 * MONTHS_PER_YEAR * float(rf.mean()), ann_sd)
    if s is not None:
        out["sharpe"] = s
    if monthly_weights is not None and asset_returns is not None:
        to = turnover(monthly_weights, asset_returns, r)
        if to is not None:
            out["turnover"] = to
    return out
