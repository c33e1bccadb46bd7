"""Closed-form error model of the two-source fusion estimator.

The model treats the attention-weighted fusion as a scalar blend
x_hat(alpha) = alpha * x + (1 - alpha) * g of the LiDAR observation
x = x* + n_L + a and the image-text prior g = x* + b + n_P.  With effective
errors V_x = sigma_L^2 + |a|^2 and V_P = sigma_P^2 + |b|^2 the expected
squared error is alpha^2 V_x + (1-alpha)^2 V_P, minimised at
alpha* = V_P / (V_x + V_P), which always improves on the LiDAR-only risk.

Variances are totals over the whole vector (the model is written for a
scalar signal); the Monte-Carlo validator therefore spreads sigma^2 over
`dim` coordinates so that E|n|^2 = sigma^2 for any dim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import rng
from .errors import DegenerateDesignError, InputError


@dataclass
class OracleParams:
    sigma_l2: float  # LiDAR noise variance
    a_norm2: float  # adversarial energy |a|^2
    sigma_p2: float  # prior noise variance
    b_norm2: float  # prior bias energy |b|^2

    def validate(self):
        for name in ("sigma_l2", "a_norm2", "sigma_p2", "b_norm2"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0, got {getattr(self, name)}")
        return self


def effective_errors(p: OracleParams):
    """(V_x, V_P): total expected squared error of each source."""
    p.validate()
    return p.sigma_l2 + p.a_norm2, p.sigma_p2 + p.b_norm2


def error_at_alpha(v_x: float, v_p: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * alpha * v_x + (1.0 - alpha) * (1.0 - alpha) * v_p


def optimal_alpha(v_x: float, v_p: float):
    """(alpha*, minimal error) of the blend."""
    if v_x + v_p <= 0:
        raise DegenerateDesignError("optimal alpha is undefined when V_x + V_P = 0")
    alpha_star = v_p / (v_x + v_p)
    return alpha_star, v_x * v_p / (v_x + v_p)


def improvement_holds(v_x: float, v_p: float) -> bool:
    """Whether the fused minimum beats the LiDAR-only risk V_x."""
    _, err_min = optimal_alpha(v_x, v_p)
    return err_min < v_x


class MonteCarloResult(NamedTuple):
    mean: float
    stderr: float
    trials: int


def monte_carlo_validate(p: OracleParams, alpha: float, dim: int, trials: int,
                         seed: int) -> MonteCarloResult:
    """Simulate the blend and return the empirical mean squared error.

    The fixed offsets a and b are spread uniformly over the dim coordinates
    at the requested total energies; n_L and n_P are independent Gaussians
    with total variances sigma_L^2 and sigma_P^2.  The stderr of the mean
    supports the 3-standard-error agreement check against the closed form.
    """
    p.validate()
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must be in [0, 1], got {alpha}")
    if trials < 1000:
        raise InputError(f"need at least 1000 trials for a stable estimate, got {trials}")
    if dim < 1:
        raise InputError(f"dim must be >= 1, got {dim}")

    a = math.sqrt(p.a_norm2 / dim)
    b = math.sqrt(p.b_norm2 / dim)
    sd_l = math.sqrt(p.sigma_l2 / dim)
    sd_p = math.sqrt(p.sigma_p2 / dim)

    n_l = rng.stream(seed, "mc:lidar").normal(trials * dim).astype(np.float64).reshape(trials, dim)
    n_p = rng.stream(seed, "mc:prior").normal(trials * dim).astype(np.float64).reshape(trials, dim)
    lidar_err = sd_l * n_l + a  # x - x*
    prior_err = sd_p * n_p + b  # g - x*
    resid = alpha * lidar_err + (1.0 - alpha) * prior_err
    per_trial = np.sum(resid * resid, axis=1)
    mean = float(np.mean(per_trial))
    stderr = float(np.std(per_trial, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return MonteCarloResult(mean, stderr, trials)
