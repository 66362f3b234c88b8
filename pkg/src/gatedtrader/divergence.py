"""Composite priority score blending anomaly size with decorrelation.

``omega = alpha * z_norm + (1 - alpha) * rho_cb`` where

* ``rho_cb = 1 - |corr(asset prices, reference prices)|`` over the shared window
* ``z_norm = 1 - exp(-kappa * (|z| - z_threshold))`` above the threshold, else 0

Both terms live in [0, 1], so a huge z cannot swamp the decorrelation term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .config import DivergenceConfig


@dataclass(frozen=True)
class DivergenceScore:
    rho_cb: float
    z_norm: float
    omega: float
    degenerate: bool = False
    partial: bool = False

    def to_dict(self) -> dict:
        return {"rho_cb": self.rho_cb, "z_norm": self.z_norm, "omega": self.omega,
                "degenerate": self.degenerate, "partial": self.partial}


def correlation_break(prices_asset: Sequence[float], prices_ref: Sequence[float],
                      on: str = "prices") -> tuple[float, bool]:
    """``(rho_cb, degenerate)``. A constant series yields ``(0.0, True)``."""
    x = np.asarray(prices_asset, dtype=np.float64)
    y = np.asarray(prices_ref, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.shape[0] < 2:
        raise ValueError("price windows must be 1-D, equal length and at least 2 long")
    if on == "returns":
        if x.shape[0] < 3:
            return 0.0, True
        x = np.diff(x) / x[:-1]
        y = np.diff(y) / y[:-1]
    elif on != "prices":
        raise ValueError(f"unknown correlation basis {on!r}")
    rho = _kernels.pearson(x, y)
    if not math.isfinite(rho):
        return 0.0, True
    # |rho| can exceed 1 by an ulp
    return 1.0 - min(1.0, abs(rho)), False


def saturate_z(z_t: float, kappa: float = 0.5, z_threshold: float = 2.0) -> float:
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    a = abs(z_t)
    if not a >= z_threshold:
        return 0.0
    return -math.expm1(-kappa * (a - z_threshold))


def composite_omega(z_norm: float, rho_cb: float, alpha: float = 0.5) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return alpha * z_norm + (1.0 - alpha) * rho_cb


def align_windows(asset_prices: Sequence[tuple[int, float]],
                  ref_prices: Sequence[tuple[int, float]]) -> tuple[list[float], list[float]]:
    """Keep only timestamps present in both (timestamp, price) series."""
    ref = dict(ref_prices)
    xs, ys = [], []
    for ts, p in asset_prices:
        if ts in ref:
            xs.append(p)
            ys.append(ref[ts])
    return xs, ys


def divergence_score(z_t: float | None, asset_prices: Sequence[tuple[int, float]],
                     ref_prices: Sequence[tuple[int, float]] | None,
                     cfg: DivergenceConfig, z_threshold: float = 2.0) -> DivergenceScore:
    """Score one triggered asset.

    Fewer than two shared timestamps with the reference (or no reference at
    all) gives ``rho_cb = 0`` and ``partial=True``; the anomaly term still counts.
    """
    z_norm = saturate_z(z_t, cfg.kappa, z_threshold) if z_t is not None else 0.0
    partial = degenerate = False
    rho_cb = 0.0
    xs, ys = align_windows(asset_prices, ref_prices or [])
    if len(xs) < 2:
        partial = True
    else:
        rho_cb, degenerate = correlation_break(xs, ys, cfg.correlation_on)
    return DivergenceScore(
        rho_cb=rho_cb,
        z_norm=z_norm,
        omega=composite_omega(z_norm, rho_cb, cfg.alpha),
        degenerate=degenerate,
        partial=partial,
    )
