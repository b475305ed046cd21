"""Walk-forward return and volatility forecasts over a panel.

One pooled model is fit per refit month on every usable stock-month in the
trailing training window, each month weighted equally (``1/(T N_t)`` per
row). A model fit at month ``d`` sees returns strictly before ``d`` and
forecasts months ``d .. d + refit_interval - 1`` from their feature rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ..data.features import VOL_FEATURE, VOL_PROXY_SCALE, volatility_target
from ..data.panel import PanelDataset
from ..models.registry import ModelSpec, fit_model
from .schedule import Schedule

logger = logging.getLogger(__name__)

# floor on volatility forecasts, in monthly return units
MIN_VOL_FORECAST = 1e-4


class ForecastError(RuntimeError):
    pass


@dataclass(frozen=True)
class ForecastPanel:
    """T x n forecasts aligned with the panel; NaN where none was made."""

    returns: NDArray[np.float64]
    vol: NDArray[np.float64] | None
    refit_months: tuple[int, ...]
    spec: ModelSpec


def return_design(panel: PanelDataset) -> NDArray[np.float64]:
    """Return-model features: the panel's columns without the volatility proxy."""
    keep = [k for k, name in enumerate(panel.feature_names) if name != VOL_FEATURE]
    return panel.features[:, :, keep]


def vol_design(panel: PanelDataset) -> NDArray[np.float64]:
    """Volatility-model features: panel columns plus the lagged volatility proxy."""
    if VOL_FEATURE in panel.feature_names:
        return panel.features
    lag = np.full(panel.returns.shape, np.nan)
    lag[1:] = VOL_PROXY_SCALE * np.abs(panel.returns[:-1])
    return np.concatenate([panel.features, lag[:, :, None]], axis=2)


def training_rows(design, target, usable, lo: int, hi: int):
    """Stack usable rows of months ``[lo, hi)`` with equal total weight per month."""
    Xs, ys, ws = [], [], []
    for t in range(lo, hi):
        ok = usable[t] & np.isfinite(target[t]) & np.all(np.isfinite(design[t]), axis=1)
        k = int(ok.sum())
        if k == 0:
            continue
        Xs.append(design[t][ok])
        ys.append(target[t][ok])
        ws.append(np.full(k, 1.0 / k))
    if not Xs:
        return None
    w = np.concatenate(ws)
    return np.vstack(Xs), np.concatenate(ys), w / w.sum()


def walk_forward(
    design: NDArray[np.float64],
    target: NDArray[np.float64],
    usable: NDArray[np.bool_],
    spec: ModelSpec,
    start: int,
    end: int,
    train_length: int,
    refit_interval: int,
) -> tuple[NDArray[np.float64], tuple[int, ...]]:
    """Forecasts for months ``[start, end)`` with refits every ``refit_interval`` months."""
    T, n = target.shape
    out = np.full((T, n), np.nan)
    refits = tuple(range(start, end, refit_interval))
    for d in refits:
        rows = training_rows(design, target, usable, max(0, d - train_length), d)
        if rows is None or rows[1].size < 2:
            raise ForecastError(f"no training data before month {d}")
        X, y, w = rows
        model = fit_model(spec, X, y, sample_weight=w)
        for t in range(d, min(d + refit_interval, end)):
            ok = usable[t] & np.all(np.isfinite(design[t]), axis=1)
            if ok.any():
                out[t, ok] = model.predict(design[t][ok])
    return out, refits


def forecast_panel(
    panel: PanelDataset,
    spec: ModelSpec,
    schedule: Schedule,
    start: int | None = None,
    end: int | None = None,
    with_vol: bool = False,
    vol_spec: ModelSpec | None = None,
) -> ForecastPanel:
    """Out-of-sample forecasts from ``start`` (default: enough history for the holdout) to ``end``."""
    start = schedule.forecast_start if start is None else start
    end = schedule.holdout_end if end is None else end
    if start < schedule.train_start + 1:
        raise ForecastError(
            f"first forecast month {start} leaves no training history; shorten the windows or extend the panel")
    usable = panel.usable()
    ret, refits = walk_forward(return_design(panel), panel.returns, usable, spec, start, end,
                               schedule.train_length, schedule.refit_interval)
    vol = None
    if with_vol:
        vspec = vol_spec or spec.for_volatility()
        vol, _ = walk_forward(vol_design(panel), volatility_target(panel.returns), usable, vspec, start, end,
                              schedule.train_length, schedule.refit_interval)
        vol = np.where(np.isfinite(vol), np.maximum(vol, MIN_VOL_FORECAST), np.nan)
    logger.info("forecasts for months %d..%d with %d refits (%s)", start, end - 1, len(refits), spec.family)
    return ForecastPanel(ret, vol, refits, spec)
