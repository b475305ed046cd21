"""Hyperparameter selection by pooled out-of-sample R-squared on the validation window."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .registry import ModelSpec, expand_grid, regularization_strength

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ValidationResult:
    best: ModelSpec
    score: float
    scores: tuple[tuple[ModelSpec, float], ...]

    def to_dict(self) -> dict:
        return {
            "family": self.best.family,
            "params": self.best.params,
            "r2_oos": self.score,
            "grid": [{"params": s.params, "r2_oos": v} for s, v in self.scores],
        }


def select_best(scored: Sequence[tuple[ModelSpec, float]]) -> tuple[ModelSpec, float]:
    """Highest score; ties go to the more regularized spec, then the earlier one."""
    if not scored:
        raise ValueError("empty hyperparameter grid")
    finite = [(s, v) for s, v in scored if np.isfinite(v)]
    if not finite:
        raise ValueError("no grid point produced a finite validation score")
    top = max(v for _, v in finite)
    tied = [s for s, v in finite if v == top]
    best = max(tied, key=regularization_strength) if len(tied) > 1 else tied[0]
    return best, top


def grid_validate(
    model_family: str,
    hyper_grid: Mapping[str, Sequence[Any]] | Sequence[ModelSpec],
    panel,
    schedule,
) -> ValidationResult:
    """Fit every grid point walk-forward over the validation window and keep the best.

    Parameters
    ----------
    model_family
        One of ``ols``, ``elastic_net``, ``random_forest``, ``svr``.
    hyper_grid
        ``{param: [values]}`` (Cartesian product) or an explicit list of specs.
    panel
        :class:`~mppfolio.data.PanelDataset`.
    schedule
        :class:`~mppfolio.backtest.Schedule`; only its training and
        validation windows are read.
    """
    from ..backtest.forecast import return_design, walk_forward
    from ..backtest.metrics import r2_oos

    if isinstance(hyper_grid, Mapping):
        specs = expand_grid(model_family, dict(hyper_grid)) if hyper_grid else [ModelSpec(model_family)]
        if any(len(v) == 0 for v in hyper_grid.values()):
            specs = []
    else:
        specs = list(hyper_grid)
    if not specs:
        raise ValueError("empty hyperparameter grid")
    v0, v1 = schedule.validate_start, schedule.validate_end
    if v1 <= v0:
        raise ValueError("validation window is empty")
    usable = panel.usable()
    design = return_design(panel)
    scored = []
    for spec in specs:
        pred, _ = walk_forward(design, panel.returns, usable, spec, v0, v1, schedule.train_length,
                               schedule.refit_interval)
        window = pred[v0:v1]
        actual = panel.returns[v0:v1]
        ok = np.isfinite(window) & np.isfinite(actual)
        score = r2_oos(actual[ok], window[ok])
        logger.info("validation %s %s: R2_oos=%.6f", spec.family, spec.params, score)
        scored.append((spec, score))
    best, score = select_best(scored)
    return ValidationResult(best, score, tuple(scored))
