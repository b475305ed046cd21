"""Firm characteristics from raw monthly price, share and fundamental series.

Every feature row ``t`` is built from raw data at months ``t - 1`` and
earlier, matching the panel convention that ``features[t]`` is known before
month ``t`` begins. Months without enough history are NaN.

Definitions (monthly data only):

==============  ===========================================================
mom1m           return over month t-1
mvel1           log market cap at t-1
mom6m           cumulative return over months t-6 .. t-2
mom12m          cumulative return over months t-12 .. t-2
chmom           mom6m(t) - mom6m(t-6)
maxret          largest monthly return over t-12 .. t-1
retvol          standard deviation of monthly returns over t-12 .. t-1
chcsho          shares(t-1) / shares(t-13) - 1
sp              sales / market cap at t-1
turn            volume / shares at t-1
std_turn        standard deviation of turn over t-12 .. t-1
ep              earnings / market cap at t-1
bm              book equity / market cap at t-1
operprof        operating income / sales at t-1
==============  ===========================================================

Earnings enter as an earnings yield rather than price-to-earnings so that
negative or tiny earnings do not explode the feature. Volatility models add
``lagvol``, the absolute return of month t-1 scaled by ``sqrt(pi/2)`` so it
is an unbiased monthly volatility proxy under normality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

RETURN_FEATURES = (
    "mom1m", "mvel1", "mom6m", "mom12m", "chmom", "maxret", "retvol",
    "chcsho", "sp", "turn", "std_turn", "ep", "bm", "operprof",
)
VOL_FEATURE = "lagvol"
VOL_PROXY_SCALE = float(np.sqrt(np.pi / 2.0))


@dataclass(frozen=True)
class RawPanel:
    """Raw T x n monthly series; NaN for unavailable values."""

    price: NDArray[np.float64]
    shares: NDArray[np.float64]
    volume: NDArray[np.float64]
    sales: NDArray[np.float64]
    earnings: NDArray[np.float64]
    book: NDArray[np.float64]
    operating_income: NDArray[np.float64]

    @classmethod
    def from_prices(cls, price) -> "RawPanel":
        """Price-only raw panel; share and fundamental series are NaN."""
        price = np.asarray(price, float)
        nan = np.full(price.shape, np.nan)
        return cls(price, nan, nan, nan, nan, nan, nan)

    def simple_returns(self) -> NDArray[np.float64]:
        """``r[t] = p[t] / p[t-1] - 1``; row 0 is NaN."""
        p = np.asarray(self.price, float)
        r = np.full(p.shape, np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            r[1:] = p[1:] / p[:-1] - 1.0
        return r


def _lag(x: NDArray[np.float64], k: int) -> NDArray[np.float64]:
    """``out[t] = x[t - k]``, NaN where ``t - k < 0``."""
    out = np.full(x.shape, np.nan)
    if k < x.shape[0]:
        out[k:] = x[: x.shape[0] - k]
    return out


def _window(x: NDArray[np.float64], first: int, last: int) -> NDArray[np.float64]:
    """Stack lags ``first..last`` (inclusive) along a new leading axis."""
    return np.stack([_lag(x, k) for k in range(first, last + 1)])


def _cumulative(r: NDArray[np.float64], first: int, last: int) -> NDArray[np.float64]:
    # NaN anywhere in the window propagates through the product
    return np.prod(1.0 + _window(r, first, last), axis=0) - 1.0


def _ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    return np.where(np.isfinite(out), out, np.nan)


def compute_features(raw: RawPanel, volatility: bool = False) -> tuple[tuple[str, ...], NDArray[np.float64]]:
    """Build the T x n x m feature array and its column names.

    Parameters
    ----------
    raw
        Monthly raw series.
    volatility
        Append the lagged volatility proxy used by volatility models.
    """
    r = raw.simple_returns()
    mcap = np.asarray(raw.price, float) * np.asarray(raw.shares, float)
    turn = _ratio(np.asarray(raw.volume, float), np.asarray(raw.shares, float))
    mom6 = _cumulative(r, 2, 6)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_mcap = np.log(np.where(mcap > 0, mcap, np.nan))
    cols = {
        "mom1m": _lag(r, 1),
        "mvel1": _lag(log_mcap, 1),
        "mom6m": mom6,
        "mom12m": _cumulative(r, 2, 12),
        "chmom": mom6 - _lag(mom6, 6),
        "maxret": np.max(_window(r, 1, 12), axis=0),
        "retvol": np.std(_window(r, 1, 12), axis=0, ddof=1),
        "chcsho": _lag(_ratio(np.asarray(raw.shares, float), _lag(np.asarray(raw.shares, float), 12)) - 1.0, 1),
        "sp": _lag(_ratio(np.asarray(raw.sales, float), mcap), 1),
        "turn": _lag(turn, 1),
        "std_turn": np.std(_window(turn, 1, 12), axis=0, ddof=1),
        "ep": _lag(_ratio(np.asarray(raw.earnings, float), mcap), 1),
        "bm": _lag(_ratio(np.asarray(raw.book, float), mcap), 1),
        "operprof": _lag(_ratio(np.asarray(raw.operating_income, float), np.asarray(raw.sales, float)), 1),
    }
    names = list(RETURN_FEATURES)
    if volatility:
        cols[VOL_FEATURE] = VOL_PROXY_SCALE * np.abs(_lag(r, 1))
        names.append(VOL_FEATURE)
    return tuple(names), np.stack([cols[k] for k in names], axis=2)


def volatility_target(returns: NDArray[np.float64]) -> NDArray[np.float64]:
    """Realized monthly volatility proxy ``sqrt(pi/2) * |r|`` for volatility models."""
    return VOL_PROXY_SCALE * np.abs(np.asarray(returns, float))
