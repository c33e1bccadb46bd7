"""Reconstruction quality metrics: MSE, PSNR and cross-model percent delta."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, InputError

PEAK_TO_PEAK = 510.0  # width of the [-255, 255] value range


@dataclass
class MetricConfig:
    """PSNR MAX convention.

    modes: constant (use max_value), per_batch_max (largest |value| in the
    reference batch), peak_to_peak (510).
    """

    psnr_max_mode: str = "constant"
    max_value: float = 255.0

    def validate(self):
        if self.psnr_max_mode not in ("constant", "per_batch_max", "peak_to_peak"):
            raise ConfigError(f"unknown psnr_max_mode {self.psnr_max_mode!r}")
        if self.psnr_max_mode == "constant" and self.max_value <= 0:
            raise ConfigError(f"constant PSNR MAX must be > 0, got {self.max_value}")
        return self


def mse(recon: np.ndarray, clean: np.ndarray) -> float:
    recon = np.asarray(recon)
    clean = np.asarray(clean)
    if recon.shape != clean.shape:
        raise DimensionError(f"mse: shapes {recon.shape} and {clean.shape} differ")
    diff = recon.astype(np.float64) - clean.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(mse_value: float, cfg: MetricConfig | None = None, batch: np.ndarray | None = None) -> float:
    """10*log10(MAX^2 / mse); +inf for a perfect reconstruction."""
    cfg = (cfg or MetricConfig()).validate()
    if mse_value < 0:
        raise InputError(f"mse must be >= 0, got {mse_value}")
    if cfg.psnr_max_mode == "constant":
        max_val = cfg.max_value
    elif cfg.psnr_max_mode == "peak_to_peak":
        max_val = PEAK_TO_PEAK
    else:
        if batch is None:
            raise InputError("per_batch_max mode needs the reference batch")
        max_val = float(np.max(np.abs(batch)))
        if max_val <= 0:
            raise ConfigError("per_batch_max: batch has no nonzero values")
    if mse_value == 0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse_value)


def percent_delta(trifusion_value: float, cnn_value: float) -> float:
    """100 * (trifusion - cnn) / cnn."""
    if cnn_value == 0:
        raise InputError("percent delta is undefined for a zero baseline")
    return 100.0 * (trifusion_value - cnn_value) / cnn_value
