"""Uniform fit/predict surface over the model families.

A :class:`ModelSpec` names a family and its hyperparameters. Fitting
standardizes features with training-window statistics only and returns a
:class:`Forecaster` that applies the same transform at prediction time.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .elastic_net import ElasticNetModel, fit_elastic_net
from .forest import RandomForestModel, fit_random_forest
from .svr import SvrModel, fit_svr

logger = logging.getLogger(__name__)

FAMILIES = ("ols", "elastic_net", "random_forest", "svr")
MODEL_FORMAT_VERSION = 1

# Defaults for return models; volatility models override a few (see VOL_DEFAULTS).
DEFAULTS: dict[str, dict[str, Any]] = {
    "ols": {},
    "elastic_net": {"lam": 1e-3, "alpha": 0.5},
    "random_forest": {"B": 500, "m_try": 5, "s_min": 0.95, "k_max": 6, "seed": 0, "n_seeds": 1},
    "svr": {"C": 3.0, "gamma": 0.1, "epsilon": 0.1, "max_rows": 1500, "seed": 0},
}
VOL_DEFAULTS: dict[str, dict[str, Any]] = {
    "random_forest": {"s_min": 0.92, "k_max": 8},
    "svr": {"C": 1.0},
}


@dataclass(frozen=True)
class ModelSpec:
    family: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        unknown = set(self.params) - set(DEFAULTS[self.family])
        if unknown:
            raise ValueError(f"unknown {self.family} hyperparameters: {sorted(unknown)}")
        merged = {**DEFAULTS[self.family], **self.params}
        object.__setattr__(self, "params", merged)

    def for_volatility(self) -> "ModelSpec":
        """Same family with the volatility-model defaults filled in where unset."""
        return ModelSpec(self.family, {**DEFAULTS[self.family], **VOL_DEFAULTS.get(self.family, {}), **self._explicit()})

    def _explicit(self) -> dict[str, Any]:
        return {k: v for k, v in self.params.items() if DEFAULTS[self.family].get(k, object()) != v}

    def key(self) -> str:
        return json.dumps({"family": self.family, "params": self.params}, sort_keys=True)


def regularization_strength(spec: ModelSpec) -> tuple:
    """Sort key: larger means more heavily regularized.

    Used to break ties in validation scores toward the simpler model.
    """
    p = spec.params
    if spec.family == "elastic_net":
        return (p["lam"], p["alpha"])
    if spec.family == "random_forest":
        return (p["s_min"], -p["k_max"], -p["m_try"], -p["B"], -p["seed"])
    if spec.family == "svr":
        return (-p["C"], -p["gamma"], p["epsilon"])
    return ()


@dataclass(frozen=True)
class Standardizer:
    mean: NDArray[np.float64]
    scale: NDArray[np.float64]

    @classmethod
    def fit(cls, X: NDArray[np.float64]) -> "Standardizer":
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        return cls(mean, np.where(sd > 0, sd, 1.0))

    def transform(self, X: ArrayLike) -> NDArray[np.float64]:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


@dataclass(frozen=True)
class Forecaster:
    spec: ModelSpec
    standardizer: Standardizer
    models: tuple[Any, ...]

    def predict(self, X: ArrayLike) -> NDArray[np.float64]:
        Z = self.standardizer.transform(np.atleast_2d(X))
        preds = [np.atleast_1d(m.predict(Z)) for m in self.models]
        return np.sum(preds, axis=0) / len(preds)

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "spec": {"family": self.spec.family, "params": self.spec.params},
            "standardizer": {"mean": self.standardizer.mean.tolist(), "scale": self.standardizer.scale.tolist()},
            "models": [m.to_dict() for m in self.models],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forecaster":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
        spec = ModelSpec(d["spec"]["family"], d["spec"]["params"])
        std = Standardizer(np.asarray(d["standardizer"]["mean"], float), np.asarray(d["standardizer"]["scale"], float))
        loaders = {"elastic_net": ElasticNetModel, "random_forest": RandomForestModel, "svr": SvrModel}
        models = tuple(loaders[m["family"]].from_dict(m) for m in d["models"])
        return cls(spec, std, models)


def fit_model(spec: ModelSpec, X: ArrayLike, y: ArrayLike, sample_weight: ArrayLike | None = None) -> Forecaster:
    """Fit one forecaster on raw (unstandardized) features."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    std = Standardizer.fit(X)
    Z = std.transform(X)
    p = spec.params
    if spec.family == "ols":
        models: tuple = (fit_elastic_net(Z, y, 0.0, 1.0, sample_weight=sample_weight, tol=1e-10),)
    elif spec.family == "elastic_net":
        models = (fit_elastic_net(Z, y, p["lam"], p["alpha"], sample_weight=sample_weight),)
    elif spec.family == "random_forest":
        models = tuple(
            fit_random_forest(Z, y, B=p["B"], m_try=p["m_try"], s_min=p["s_min"], k_max=p["k_max"], base_seed=p["seed"] + k)
            for k in range(p["n_seeds"])
        )
    else:
        if y.size > p["max_rows"]:
            keep = np.sort(np.random.default_rng(p["seed"]).choice(y.size, p["max_rows"], replace=False))
            Z, y = Z[keep], y[keep]
        models = (fit_svr(Z, y, cost=p["C"], gamma=p["gamma"], epsilon_tube=p["epsilon"]),)
    return Forecaster(spec, std, models)


def expand_grid(family: str, grid: dict[str, list]) -> list[ModelSpec]:
    """Cartesian product of a ``{param: [values]}`` grid, in lexicographic order."""
    import itertools

    names = sorted(grid)
    combos = itertools.product(*(grid[k] for k in names))
    return [ModelSpec(family, dict(zip(names, c))) for c in combos]
