"""Strategy descriptions and the per-month portfolio building blocks."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..mpp import (
    ConstraintSet,
    DenominatorNonPositive,
    ErrorPanel,
    min_error_return_ratio,
    min_error_weights,
)

logger = logging.getLogger(__name__)

N_DECILES = 10


class StrategyKind(str, enum.Enum):
    MPP = "Mpp"
    MIN_ERR = "MinErr"
    MIN_ERR_RET = "MinErrRet"
    ERR_MEAN = "ErrMean"
    DECILE_EQL = "DecileEql"
    DECILE_MPP = "DecileMpp"
    DECILE_ERR = "DecileErr"
    DECILE_ERR_RET = "DecileErrRet"
    MPP_TIMING = "MppTiming"
    ERR_TIMING = "ErrTiming"
    ERR_RET_TIMING = "ErrRetTiming"
    MKT_EQL = "MktEql"
    MKT_TIMING = "MktTiming"
    BUY_HOLD = "BuyHold"


DECILE_KINDS = {StrategyKind.DECILE_EQL, StrategyKind.DECILE_MPP, StrategyKind.DECILE_ERR, StrategyKind.DECILE_ERR_RET}
TIMING_KINDS = {StrategyKind.MPP_TIMING, StrategyKind.ERR_TIMING, StrategyKind.ERR_RET_TIMING, StrategyKind.MKT_TIMING}
# portfolio a timing strategy scales
TIMING_BASE = {
    StrategyKind.MPP_TIMING: StrategyKind.MPP,
    StrategyKind.ERR_TIMING: StrategyKind.MIN_ERR,
    StrategyKind.ERR_RET_TIMING: StrategyKind.MIN_ERR_RET,
    StrategyKind.MKT_TIMING: StrategyKind.MKT_EQL,
}
LEGS = ("top", "bottom", "long_short")

_LABELS = {
    StrategyKind.MPP: "MPP",
    StrategyKind.MIN_ERR: "Min Err",
    StrategyKind.MIN_ERR_RET: "Min Err/Ret",
    StrategyKind.ERR_MEAN: "Err Mean",
    StrategyKind.DECILE_EQL: "Dec Eql",
    StrategyKind.DECILE_MPP: "Dec MPP",
    StrategyKind.DECILE_ERR: "Dec Err",
    StrategyKind.DECILE_ERR_RET: "Dec Err/Ret",
    StrategyKind.MPP_TIMING: "MPP Tim",
    StrategyKind.ERR_TIMING: "Err Tim",
    StrategyKind.ERR_RET_TIMING: "Err/Ret Tim",
    StrategyKind.MKT_EQL: "Mkt Eql",
    StrategyKind.MKT_TIMING: "Mkt Tim",
    StrategyKind.BUY_HOLD: "Benchmark",
}
_LEG_LABELS = {"top": "1st", "bottom": "10th", "long_short": "L/S"}


@dataclass(frozen=True)
class StrategySpec:
    """One backtested strategy.

    ``leg`` applies to decile kinds only (default ``"top"``), ``lookback``
    and ``error_mean_mode`` to ``ErrMean`` only; setting them on another
    kind is an error.
    """

    kind: StrategyKind
    weight_cap: float = 0.3
    risk_aversion: float = 4.0
    timing_clamp: tuple[float, float] = (0.0, 2.0)
    required_return: float = -0.1
    leg: str | None = None
    lookback: int | None = None
    error_mean_mode: str | None = None

    def __post_init__(self) -> None:
        kind = StrategyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not 0.0 < self.weight_cap <= 1.0:
            raise ValueError(f"weight_cap must lie in (0, 1], got {self.weight_cap}")
        lo, hi = (float(v) for v in self.timing_clamp)
        if lo > hi:
            raise ValueError(f"timing clamp [{lo}, {hi}] is empty")
        object.__setattr__(self, "timing_clamp", (lo, hi))
        if self.risk_aversion <= 0:
            raise ValueError("risk_aversion must be positive")
        if kind in DECILE_KINDS:
            leg = self.leg or "top"
            if leg not in LEGS:
                raise ValueError(f"leg must be one of {LEGS}, got {leg!r}")
            object.__setattr__(self, "leg", leg)
        elif self.leg is not None:
            raise ValueError(f"{kind.value} does not take a decile leg")
        if kind is StrategyKind.ERR_MEAN:
            object.__setattr__(self, "lookback", int(self.lookback or 12))
            object.__setattr__(self, "error_mean_mode", self.error_mean_mode or "inverse")
            if self.lookback < 1:
                raise ValueError("lookback must be positive")
        elif self.lookback is not None or self.error_mean_mode is not None:
            raise ValueError(f"{kind.value} does not take lookback/error_mean_mode")

    def label(self, model_name: str = "") -> str:
        base = _LABELS[self.kind]
        if self.kind in DECILE_KINDS:
            base = f"{_LEG_LABELS[self.leg]} {base}"
        if self.kind is StrategyKind.ERR_MEAN:
            base = f"{base} {self.lookback}"
        if self.kind in (StrategyKind.MKT_EQL, StrategyKind.MKT_TIMING, StrategyKind.BUY_HOLD) or not model_name:
            return base
        return f"{model_name} {base}"

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "weight_cap": self.weight_cap, "risk_aversion": self.risk_aversion,
             "timing_clamp": list(self.timing_clamp), "required_return": self.required_return}
        for k in ("leg", "lookback", "error_mean_mode"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StrategySpec":
        d = dict(d)
        if "timing_clamp" in d:
            d["timing_clamp"] = tuple(d["timing_clamp"])
        return cls(**d)


def timing_weight(expected_excess: float, variance_forecast: float, risk_aversion: float = 4.0,
                  clamp: tuple[float, float] = (0.0, 2.0)) -> float:
    """Reward-risk exposure ``E[excess] / (gamma * var)`` clamped to ``clamp``."""
    if not variance_forecast > 0:
        raise ValueError(f"variance forecast must be positive, got {variance_forecast}")
    raw = expected_excess / (risk_aversion * variance_forecast)
    lo, hi = clamp
    return float(min(max(raw, lo), hi))


def mpp_forecasts(weights: ArrayLike, stock_return_forecasts: ArrayLike,
                  stock_vol_forecasts: ArrayLike) -> tuple[float, float]:
    """Portfolio return ``w'mu`` and volatility ``sqrt(sum w_i^2 s_i^2)`` (diagonal covariance)."""
    w = np.asarray(weights, float).reshape(-1)
    mu = np.asarray(stock_return_forecasts, float).reshape(-1)
    s = np.asarray(stock_vol_forecasts, float).reshape(-1)
    if not (w.size == mu.size == s.size):
        raise ValueError(f"dimension mismatch: {w.size}, {mu.size}, {s.size}")
    if np.any(s < 0):
        raise ValueError("volatility forecasts must be nonnegative")
    return float(w @ mu), float(np.sqrt(np.sum(w * w * s * s)))


def decile_members(forecasts: ArrayLike) -> list[NDArray[np.int64]]:
    """Indices of each forecast decile, highest forecasts first.

    Ranks are by forecast descending with ties kept in index order; decile
    ``k`` holds ranks ``floor(k n / 10) .. floor((k + 1) n / 10) - 1``.
    """
    f = np.asarray(forecasts, float).reshape(-1)
    n = f.size
    if n < N_DECILES:
        raise ValueError(f"need at least {N_DECILES} stocks for deciles, got {n}")
    order = np.argsort(-f, kind="stable")
    cuts = [k * n // N_DECILES for k in range(N_DECILES + 1)]
    return [order[cuts[k]: cuts[k + 1]] for k in range(N_DECILES)]


def _within(members: NDArray[np.int64], mode: str, mpp_weights, errors: ErrorPanel | None,
            mu: NDArray[np.float64], cap: float) -> NDArray[np.float64]:
    k = members.size
    if mode == "Eql":
        return np.full(k, 1.0 / k)
    if mode == "Mpp":
        w = np.asarray(mpp_weights, float)[members]
        total = w.sum()
        return w / total if total > 0 else np.full(k, 1.0 / k)
    if errors is None:
        raise ValueError(f"mode {mode} needs an error panel")
    sub = errors.columns(members)
    cs = ConstraintSet.uniform(k, cap)
    if mode == "Err" or k == 1:
        return min_error_weights(sub, cs).weights if k > 1 else np.ones(1)
    try:
        return min_error_return_ratio(sub, mu[members], cs).weights
    except DenominatorNonPositive:
        logger.debug("decile has no positive-forecast allocation; using minimum-error weights")
        return min_error_weights(sub, cs).weights


def decile_portfolios(
    forecasts: ArrayLike,
    mpp_weights: ArrayLike | None = None,
    errors: ErrorPanel | None = None,
    mode: str = "Eql",
    weight_cap: float = 1.0,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Full-length weight vectors for the top and bottom forecast deciles.

    Parameters
    ----------
    forecasts
        Next-month return forecasts, one per stock.
    mpp_weights
        Portfolio weights over all stocks, for ``mode="Mpp"``.
    errors
        Error panel over all stocks, for ``mode`` ``"Err"`` or ``"ErrRet"``.
    mode
        ``"Eql"``, ``"Mpp"``, ``"Err"`` or ``"ErrRet"``.
    weight_cap
        Per-stock cap inside a decile, relaxed to ``1/k`` for a ``k``-stock decile.
    """
    if mode not in ("Eql", "Mpp", "Err", "ErrRet"):
        raise ValueError(f"unknown decile mode {mode!r}")
    if mode == "Mpp" and mpp_weights is None:
        raise ValueError("mode Mpp needs mpp_weights")
    f = np.asarray(forecasts, float).reshape(-1)
    deciles = decile_members(f)
    out = []
    for members in (deciles[0], deciles[-1]):
        if members.size == 0:
            raise ValueError("empty decile")
        w = np.zeros(f.size)
        w[members] = _within(members, mode, mpp_weights, errors, f, weight_cap)
        out.append(w)
    return out[0], out[1]
