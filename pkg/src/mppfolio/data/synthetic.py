"""Synthetic panels from a linear factor model with known covariances.

Returns follow ``Z_t = alpha + B X_{t-1} + eps_t`` with ``eps_t ~ N(0, Gamma)``.
Each factor is a stationary AR(1) with persistence ``phi`` and unit
variance, so ``Var[X] = I`` and the population covariances are

    sigma_hat0 = B Var[X] B'         (predictable part)
    sigma0     = sigma_hat0 + Gamma  (total)

The noise covariance has heterogeneous volatilities and a common
component, and the rows of ``B`` have heterogeneous strength, so some
stocks and combinations are far more predictable than others.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .panel import PanelDataset, equal_weight_benchmark, month_range

logger = logging.getLogger(__name__)

AR_PERSISTENCE = 0.9
TRUTH_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SyntheticTruth:
    B: NDArray[np.float64]
    Gamma: NDArray[np.float64]
    factor_var: NDArray[np.float64]
    sigma_hat0: NDArray[np.float64]
    sigma0: NDArray[np.float64]
    alpha: NDArray[np.float64]
    phi: float = AR_PERSISTENCE
    seed: int = 0
    noise_scale: float = 1.0

    def to_dict(self) -> dict:
        return {
            "format_version": TRUTH_FORMAT_VERSION,
            "B": self.B.tolist(),
            "Gamma": self.Gamma.tolist(),
            "alpha": self.alpha.tolist(),
            "factor_var": self.factor_var.tolist(),
            "phi": self.phi,
            "seed": self.seed,
            "noise_scale": self.noise_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticTruth":
        B = np.asarray(d["B"], float)
        G = np.asarray(d["Gamma"], float)
        V = np.asarray(d["factor_var"], float)
        sh = B @ V @ B.T
        return cls(B, G, V, sh, sh + G, np.asarray(d["alpha"], float), float(d["phi"]), int(d["seed"]),
                   float(d["noise_scale"]))


def write_truth(truth: SyntheticTruth, path: str | Path) -> None:
    Path(path).write_text(json.dumps(truth.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_truth(path: str | Path) -> SyntheticTruth:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("format_version") != TRUTH_FORMAT_VERSION:
        raise ValueError(f"unsupported truth format version {d.get('format_version')!r}")
    return SyntheticTruth.from_dict(d)


def _noise_covariance(rng: np.random.Generator, n: int) -> NDArray[np.float64]:
    vols = rng.uniform(0.04, 0.10, n)
    corr = np.full((n, n), 0.25)
    np.fill_diagonal(corr, 1.0)
    return corr * np.outer(vols, vols)


def generate_synthetic(
    n: int,
    m: int,
    T: int,
    seed: int = 0,
    noise_scale: float = 1.0,
    *,
    signal_scale: float = 0.03,
    start_month: str = "1990-01",
    risk_free: float = 0.002,
    feature_mode: str = "factors",
    B: NDArray[np.float64] | None = None,
) -> tuple[PanelDataset, SyntheticTruth]:
    """Draw a panel and its closed-form truth.

    Parameters
    ----------
    n, m, T
        Stocks, factors and months.
    seed
        Seed for every random draw.
    noise_scale
        Multiplies the noise standard deviation; ``Gamma`` scales with its
        square. Zero gives noiseless returns.
    signal_scale
        Typical monthly standard deviation of a stock's predictable part.
    feature_mode
        ``"factors"`` exposes ``X_{t-1}`` to every stock. ``"exposures"``
        exposes the per-stock contributions ``B[i, k] * X_{t-1, k}``, so a
        pooled cross-sectional model can recover the heterogeneous signal.
    B
        Loadings to use instead of random ones (n x m).

    Returns
    -------
    (PanelDataset, SyntheticTruth)
    """
    if min(n, m, T) < 1:
        raise ValueError(f"n, m and T must be positive, got {n}, {m}, {T}")
    if noise_scale < 0:
        raise ValueError("noise_scale must be nonnegative")
    if feature_mode not in ("factors", "exposures"):
        raise ValueError(f"unknown feature_mode {feature_mode!r}")
    rng = np.random.default_rng(seed)
    phi = AR_PERSISTENCE
    if B is None:
        strength = rng.uniform(0.0, 1.0, n) ** 2
        B = signal_scale * strength[:, None] * rng.standard_normal((n, m)) / np.sqrt(m) * np.sqrt(3.0)
    B = np.asarray(B, float).reshape(n, m)
    alpha = rng.normal(0.008, 0.003, n)
    gamma = noise_scale**2 * _noise_covariance(rng, n)

    # stationary start; X[s] is the factor value at the end of month s
    X = np.empty((T + 1, m))
    X[0] = rng.standard_normal(m)
    shocks = rng.standard_normal((T, m)) * np.sqrt(1.0 - phi * phi)
    for s in range(1, T + 1):
        X[s] = phi * X[s - 1] + shocks[s - 1]
    lagged = X[:-1]  # lagged[t] = X_{t-1}

    if noise_scale > 0:
        eps = rng.multivariate_normal(np.zeros(n), gamma, size=T, method="cholesky")
    else:
        eps = np.zeros((T, n))
    returns = alpha + lagged @ B.T + eps

    if feature_mode == "factors":
        features = np.broadcast_to(lagged[:, None, :], (T, n, m)).copy()
        names = tuple(f"x{k + 1}" for k in range(m))
    else:
        features = lagged[:, None, :] * B[None, :, :]
        names = tuple(f"bx{k + 1}" for k in range(m))
    member = np.ones((T, n), bool)
    panel = PanelDataset(
        months=month_range(start_month, T),
        stock_ids=tuple(f"S{i + 1:03d}" for i in range(n)),
        returns=returns,
        features=features,
        feature_names=names,
        membership=member,
        risk_free=np.full(T, risk_free),
        benchmark=equal_weight_benchmark(returns, member),
        meta={"seed": seed, "noise_scale": noise_scale, "feature_mode": feature_mode},
    )
    factor_var = np.eye(m)
    sigma_hat0 = B @ factor_var @ B.T
    truth = SyntheticTruth(B, gamma, factor_var, sigma_hat0, sigma_hat0 + gamma, alpha, phi, int(seed),
                           float(noise_scale))
    logger.debug("generated synthetic panel n=%d m=%d T=%d seed=%d", n, m, T, seed)
    return panel, truth
