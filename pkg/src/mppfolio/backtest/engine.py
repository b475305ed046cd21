"""Monthly walk-forward portfolio engine.

For each holdout month ``t`` the engine

1. takes the stocks that are members at ``t`` with features and a full
   trailing history of returns and out-of-sample forecasts,
2. builds the error panel from the trailing error and covariance windows,
3. computes the strategy's weights from that panel and the forecasts for
   ``t`` (all made from data before ``t``),
4. earns the month-``t`` returns on those weights.

Nothing dated ``t`` or later enters step 1 to 3 except index membership and
the feature rows for ``t``, which by construction only hold earlier data.
The risk-free rate for ``t`` is estimated by its value at ``t - 1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .._io import atomic_write_text, csv_text, fmt_float, json_text
from ..data.panel import PanelDataset
from ..models.registry import ModelSpec
from ..mpp import (
    ConstraintSet,
    DenominatorNonPositive,
    ErrorPanel,
    MppError,
    ZeroVariation,
    error_mean_weights,
    evaluate_r2,
    min_error_return_ratio,
    min_error_weights,
    nla_solve,
)
from .forecast import ForecastPanel, forecast_panel
from .metrics import rolling_r2, summary_metrics
from .schedule import Schedule
from .strategies import (
    DECILE_KINDS,
    N_DECILES,
    TIMING_BASE,
    TIMING_KINDS,
    StrategyKind,
    StrategySpec,
    decile_portfolios,
    timing_weight,
)

logger = logging.getLogger(__name__)

ROLLING_R2_WINDOW = 36
MODEL_NAMES = {"ols": "OLS", "elastic_net": "Elastic Net", "random_forest": "Random Forest", "svr": "SVR"}
_DECILE_MODE = {
    StrategyKind.DECILE_EQL: "Eql",
    StrategyKind.DECILE_MPP: "Mpp",
    StrategyKind.DECILE_ERR: "Err",
    StrategyKind.DECILE_ERR_RET: "ErrRet",
}


class BacktestError(RuntimeError):
    """Data or schedule problem that stops a backtest."""


class BacktestNumericalError(BacktestError):
    """An optimizer failed inside the monthly loop."""


@dataclass(frozen=True)
class BacktestResult:
    strategy: StrategySpec
    label: str
    months: tuple[str, ...]
    stock_ids: tuple[str, ...]
    monthly_weights: NDArray[np.float64]
    monthly_returns: NDArray[np.float64]
    monthly_forecasts: NDArray[np.float64]
    risk_free: NDArray[np.float64]
    cumulative_wealth: NDArray[np.float64]
    rolling_r2: NDArray[np.float64]
    in_sample_r2: NDArray[np.float64]
    equal_weight_r2: NDArray[np.float64]
    exposure: NDArray[np.float64]
    summary: dict
    has_weights: bool = True
    meta: dict = field(default_factory=dict, repr=False)

    def write(self, out_dir: str | Path) -> None:
        """Emit ``weights.csv``, ``returns.csv`` and ``summary.json`` under ``out_dir``."""
        out = Path(out_dir)
        rows = []
        if self.has_weights:
            for t, month in enumerate(self.months):
                for i in np.flatnonzero(self.monthly_weights[t]):
                    rows.append((month, self.stock_ids[i], fmt_float(self.monthly_weights[t, i])))
        atomic_write_text(out / "weights.csv", csv_text(("month", "stock_id", "weight"), rows))
        atomic_write_text(out / "returns.csv", csv_text(
            ("month", "return", "wealth", "rolling_r2"),
            ((m, fmt_float(r), fmt_float(w), fmt_float(q)) for m, r, w, q in
             zip(self.months, self.monthly_returns, self.cumulative_wealth, self.rolling_r2))))
        atomic_write_text(out / "summary.json", json_text(self.summary))


def wealth_path(returns) -> NDArray[np.float64]:
    """Cumulative wealth from 1.0, compounded one month at a time."""
    out = np.empty(len(returns))
    w = 1.0
    for t, r in enumerate(returns):
        w = w * (1.0 + float(r))
        out[t] = w
    return out


def mpp_error_panel(errors: NDArray[np.float64], returns: NDArray[np.float64]) -> ErrorPanel:
    """Error panel whose Gram matrices are per-month second moments.

    The error and return windows may differ in length; each block is scaled
    by ``1/sqrt(length)`` and the shorter one padded with zero rows, which
    leaves both Gram matrices unchanged.
    """
    Te, Tr = errors.shape[0], returns.shape[0]
    E = errors / math.sqrt(Te)
    R = returns / math.sqrt(Tr)
    if Te < Tr:
        E = np.vstack([np.zeros((Tr - Te, E.shape[1])), E])
    elif Tr < Te:
        R = np.vstack([np.zeros((Te - Tr, R.shape[1])), R])
    return ErrorPanel(E, R)


def _eligible(usable, returns, forecasts, t: int, We: int, Wr: int) -> NDArray[np.int64]:
    ok = usable[t] & np.isfinite(forecasts[t])
    ok &= np.all(np.isfinite(forecasts[t - We:t]), axis=0) & np.all(np.isfinite(returns[t - We:t]), axis=0)
    ok &= np.all(np.isfinite(returns[t - Wr:t]), axis=0)
    return np.flatnonzero(ok)


class _Month:
    """Everything the strategies may read when deciding month ``t``."""

    def __init__(self, panel: ErrorPanel, raw_errors, mu, vol, cap: float, rho: float, month: str):
        self.panel = panel
        self.raw_errors = raw_errors
        self.mu = mu
        self.vol = vol
        self.k = mu.size
        self.month = month
        self.cs = ConstraintSet.uniform(self.k, cap, mu, rho)
        self._cache: dict = {}

    def weights(self, kind: StrategyKind, spec: StrategySpec) -> NDArray[np.float64]:
        if kind in self._cache:
            return self._cache[kind]
        w = self._compute(kind, spec)
        self._cache[kind] = w
        return w

    def _compute(self, kind: StrategyKind, spec: StrategySpec) -> NDArray[np.float64]:
        k = self.k
        if kind is StrategyKind.MKT_EQL or (k == 1 and kind not in DECILE_KINDS):
            return np.full(k, 1.0 / k)
        try:
            if kind is StrategyKind.MPP:
                return nla_solve(self.panel, self.cs).weights
            if kind is StrategyKind.MIN_ERR:
                return min_error_weights(self.panel, self.cs).weights
            if kind is StrategyKind.MIN_ERR_RET:
                try:
                    return min_error_return_ratio(self.panel, self.mu, self.cs).weights
                except DenominatorNonPositive:
                    logger.debug("%s: no positive-forecast portfolio; using minimum-error weights", self.month)
                    return self.weights(StrategyKind.MIN_ERR, spec)
            if kind is StrategyKind.ERR_MEAN:
                lookback = min(spec.lookback, self.raw_errors.shape[0])
                E = ErrorPanel(self.raw_errors, self.raw_errors)
                return error_mean_weights(E, lookback, self.cs.upper_bounds, spec.error_mean_mode)
            if kind in DECILE_KINDS:
                if k < N_DECILES:
                    raise BacktestError(f"{self.month}: deciles need {N_DECILES} eligible stocks, got {k}")
                mode = _DECILE_MODE[kind]
                mpp = self.weights(StrategyKind.MPP, spec) if mode == "Mpp" else None
                top, bottom = decile_portfolios(self.mu, mpp, self.panel, mode, spec.weight_cap)
                return {"top": top, "bottom": bottom, "long_short": top - bottom}[spec.leg]
        except MppError as exc:
            raise BacktestNumericalError(f"{self.month}: {kind.value} failed: {exc}") from exc
        raise ValueError(f"unhandled strategy kind {kind}")


def _r2(w, panel: ErrorPanel) -> float:
    try:
        return evaluate_r2(w, panel)
    except ZeroVariation:
        return math.nan


def run_backtest(
    panel: PanelDataset,
    model_family: ModelSpec | str,
    strategy: StrategySpec,
    schedule: Schedule,
    forecasts: ForecastPanel | None = None,
    model_name: str | None = None,
) -> BacktestResult:
    """Backtest one strategy over the holdout window.

    Parameters
    ----------
    panel
        Monthly panel covering the schedule.
    model_family
        Return-model spec (or bare family name with default hyperparameters).
    strategy
        What to hold each month.
    schedule
        Walk-forward windows.
    forecasts
        Precomputed forecasts to share across strategies; computed here when
        omitted. Timing strategies need volatility forecasts too.
    model_name
        Label prefix for reports; defaults to the family's display name.
    """
    spec = model_family if isinstance(model_family, ModelSpec) else ModelSpec(model_family)
    name = model_name or MODEL_NAMES.get(spec.family, spec.family)
    h0, h1 = schedule.holdout_start, schedule.holdout_end
    if h1 > panel.T:
        raise BacktestError(f"holdout ends at month {h1} but the panel has {panel.T} months")
    months = panel.months[h0:h1]
    rf = panel.risk_free[h0:h1]
    if np.any(~np.isfinite(rf)):
        raise BacktestError("risk-free rate missing in the holdout window")
    kind = strategy.kind
    label = strategy.label(name)

    if kind is StrategyKind.BUY_HOLD:
        rets = np.asarray(panel.benchmark[h0:h1], float)
        if np.any(~np.isfinite(rets)):
            raise BacktestError("benchmark missing in the holdout window")
        nan = np.full(rets.size, np.nan)
        return BacktestResult(
            strategy, label, months, panel.stock_ids, np.zeros((rets.size, panel.n)), rets, nan, rf,
            wealth_path(rets), nan, nan, nan, np.ones(rets.size), summary_metrics(rets, rf), has_weights=False)

    We, Wr = schedule.error_window, schedule.covariance_window
    if h0 - max(We, Wr) < 1:
        raise BacktestError(f"insufficient history: holdout starts at month {h0} but windows need {max(We, Wr)}")
    needs_vol = kind in TIMING_KINDS
    if forecasts is None or (needs_vol and forecasts.vol is None):
        forecasts = forecast_panel(panel, spec, schedule, with_vol=needs_vol)
    fr, fv = forecasts.returns, forecasts.vol
    usable = panel.usable()
    R_all = panel.returns

    T_h, n = h1 - h0, panel.n
    weights = np.zeros((T_h, n))
    rets = np.empty(T_h)
    preds = np.empty(T_h)
    is_r2 = np.empty(T_h)
    ew_r2 = np.empty(T_h)
    expo = np.ones(T_h)
    relaxed = False
    base_kind = TIMING_BASE.get(kind, kind)
    for j, t in enumerate(range(h0, h1)):
        idx = _eligible(usable, R_all, fr, t, We, Wr)
        if idx.size == 0:
            raise BacktestError(f"{panel.months[t]}: no eligible stocks")
        if not relaxed and idx.size * strategy.weight_cap < 1.0:
            logger.warning("%s: %d eligible stocks cannot satisfy cap %.3g; cap relaxed to 1/%d",
                           panel.months[t], idx.size, strategy.weight_cap, idx.size)
            relaxed = True
        E_raw = R_all[t - We:t, idx] - fr[t - We:t, idx]
        errs = mpp_error_panel(E_raw, R_all[t - Wr:t, idx])
        vol_t = fv[t, idx] if fv is not None else None
        state = _Month(errs, E_raw, fr[t, idx], vol_t, strategy.weight_cap, strategy.required_return,
                       panel.months[t])
        w = state.weights(base_kind, strategy)
        r_t = R_all[t, idx]
        port_ret = float(w @ r_t)
        port_fc = float(w @ state.mu)
        if needs_vol:
            rf_est = float(panel.risk_free[t - 1]) if math.isfinite(panel.risk_free[t - 1]) else 0.0
            var = float(np.sum(w * w * vol_t * vol_t))
            s = timing_weight(port_fc - rf_est, var, strategy.risk_aversion, strategy.timing_clamp)
            expo[j] = s
            rets[j] = s * port_ret + (1.0 - s) * float(panel.risk_free[t])
            preds[j] = s * port_fc + (1.0 - s) * rf_est
            weights[j, idx] = s * w
        else:
            rets[j] = port_ret
            preds[j] = port_fc
            weights[j, idx] = w
        is_r2[j] = _r2(w, errs)
        ew_r2[j] = _r2(np.full(idx.size, 1.0 / idx.size), errs)

    asset_rets = np.where(np.isfinite(R_all[h0:h1]), R_all[h0:h1], 0.0)
    summary = summary_metrics(rets, rf, weights, asset_rets)
    logger.info("%s: annual return %.2f%%", label, summary["annual_return"])
    return BacktestResult(
        strategy, label, months, panel.stock_ids, weights, rets, preds, rf, wealth_path(rets),
        rolling_r2(rets, preds, ROLLING_R2_WINDOW), is_r2, ew_r2, expo, summary,
        meta={"model": spec.key(), "refit_months": list(forecasts.refit_months)})
