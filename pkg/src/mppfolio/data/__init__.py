"""Panel ingestion, feature engineering and synthetic data."""

from .features import RETURN_FEATURES, VOL_FEATURE, RawPanel, compute_features, volatility_target
from .panel import (
    PanelDataset,
    PanelFormatError,
    equal_weight_benchmark,
    load_panel,
    month_index,
    month_label,
    month_range,
    write_panel,
)
from .synthetic import SyntheticTruth, generate_synthetic, load_truth, write_truth

__all__ = [
    "PanelDataset",
    "PanelFormatError",
    "RawPanel",
    "RETURN_FEATURES",
    "SyntheticTruth",
    "VOL_FEATURE",
    "compute_features",
    "equal_weight_benchmark",
    "generate_synthetic",
    "load_panel",
    "load_truth",
    "month_index",
    "month_label",
    "month_range",
    "volatility_target",
    "write_panel",
    "write_truth",
]
