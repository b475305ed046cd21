"""Walk-forward schedule over month indices of a panel."""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class Schedule:
    """Half-open month-index windows ``[start, end)`` for each phase.

    The training window rolls forward with a fixed length equal to
    ``train_end - train_start``: a model refit at month ``d`` sees the
    months ``[d - train_length, d)``. Refits happen every
    ``refit_interval`` months from the start of each forecast run.
    """

    train_start: int
    train_end: int
    validate_start: int
    validate_end: int
    holdout_start: int
    holdout_end: int
    refit_interval: int = 12
    covariance_window: int = 60
    error_window: int = 60

    def __post_init__(self) -> None:
        order = (self.train_start, self.train_end, self.validate_start, self.validate_end,
                 self.holdout_start, self.holdout_end)
        if self.train_start < 0:
            raise ValueError("train_start must be nonnegative")
        if not (self.train_start < self.train_end <= self.validate_start < self.validate_end
                <= self.holdout_start < self.holdout_end):
            raise ValueError(f"windows must be ordered train < validate < holdout, got {order}")
        for name in ("refit_interval", "covariance_window", "error_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def train_length(self) -> int:
        return self.train_end - self.train_start

    @property
    def mpp_window(self) -> int:
        """Months of history the portfolio step needs before each decision."""
        return max(self.covariance_window, self.error_window)

    @property
    def forecast_start(self) -> int:
        """First month that needs an out-of-sample forecast during the holdout."""
        return self.holdout_start - self.mpp_window

    def refit_months(self, start: int, end: int) -> list[int]:
        return list(range(start, end, self.refit_interval))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        return cls(**d)

    @classmethod
    def proportional(cls, T: int, train: float = 0.4, validate: float = 0.2, window: int = 60,
                     refit_interval: int = 12) -> "Schedule":
        """Split ``T`` months into train/validate/holdout by fraction."""
        t_end = int(round(T * train))
        v_end = t_end + int(round(T * validate))
        return cls(0, t_end, t_end, v_end, v_end, T, refit_interval, window, window)
