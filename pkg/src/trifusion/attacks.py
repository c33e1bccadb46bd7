"""Stochastic and gradient-based perturbations of the LiDAR input.

All attacks are white-box against the model under test: gradients flow
through the full reconstruction pipeline, but only the LiDAR tensor is
perturbed.  `model` is any callable (params, lidar_tensor) -> recon_tensor
whose output depends on the input tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ConfigError, ContractError, DimensionError, InputError
from .tensor import Tape, Tensor, backward, mse_loss


@dataclass
class PerturbationSpec:
    kind: str  # gaussian | fgsm | pgd
    level: float  # noise scale for gaussian, radius for fgsm/pgd
    pgd_step: float = 0.01
    pgd_iters: int = 40
    seed: int = 0
    clamp_to_range: bool = False

    def validate(self):
        if self.kind not in ("gaussian", "fgsm", "pgd"):
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")
        if self.level < 0:
            raise InputError(f"perturbation level must be >= 0, got {self.level}")
        if self.kind == "pgd":
            if self.pgd_step <= 0:
                raise InputError(f"pgd step must be > 0, got {self.pgd_step}")
            if self.pgd_iters < 0:
                raise InputError(f"pgd iteration count must be >= 0, got {self.pgd_iters}")
        return self


def gaussian_perturb(x: np.ndarray, alpha: float, seed: int) -> np.ndarray:
    """x + alpha * n with i.i.d. unit normals from the seeded stream."""
    if alpha < 0:
        raise InputError(f"alpha must be >= 0, got {alpha}")
    x = np.asarray(x, dtype=np.float32)
    noise = rng.stream(seed, "noise:gaussian").normal(x.size).reshape(x.shape)
    return x + np.float32(alpha) * noise


def input_gradient(model, params, x: np.ndarray, x_star: np.ndarray) -> np.ndarray:
    """d MSE(model(x), x_star) / dx."""
    tape = Tape()
    xt = tape.watch(np.asarray(x, dtype=np.float32))
    recon = model(params, xt)
    loss = mse_loss(recon, Tensor(x_star))
    backward(loss)
    if xt.grad is None:
        raise ContractError("model output does not depend on the attacked input")
    return xt.grad


def fgsm_attack(model, params, x: np.ndarray, x_star: np.ndarray, eps: float) -> np.ndarray:
    """Single signed-gradient step; every component moves by -eps, 0 or +eps."""
    if eps < 0:
        raise InputError(f"eps must be >= 0, got {eps}")
    x = np.asarray(x, dtype=np.float32)
    g = input_gradient(model, params, x, x_star)
    return x + np.float32(eps) * np.sign(g)


def linf_project(x_adv: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    """Clamp x_adv into the l-inf ball of radius eps around x; idempotent."""
    x_adv = np.asarray(x_adv, dtype=np.float32)
    x = np.asarray(x, dtype=np.float32)
    if x_adv.shape != x.shape:
        raise DimensionError(f"project: shapes {x_adv.shape} and {x.shape} differ")
    if eps < 0:
        raise InputError(f"eps must be >= 0, got {eps}")
    eps = np.float32(eps)
    return np.clip(x_adv, x - eps, x + eps)


def _assert_in_ball(x_t: np.ndarray, x: np.ndarray, eps: float) -> None:
    # one f32 ulp of slack at the operand scale
    tol = np.float32(eps) + np.spacing(np.abs(x) + np.float32(eps))
    if np.any(np.abs(x_t - x) > tol):
        raise ContractError("PGD iterate escaped the l-inf ball")


def pgd_attack(model, params, x: np.ndarray, x_star: np.ndarray, eps: float,
               step: float, iters: int, seed: int, random_start: bool = True,
               record=None) -> np.ndarray:
    """Iterated signed-gradient ascent with projection onto the l-inf ball.

    Starts from x + U(-eps, eps) noise (or x exactly when random_start is
    False).  Every iterate is checked to lie inside the ball.  With
    iters=1, step=eps and random_start=False this reduces to fgsm_attack
    bit for bit.  `record`, if given, is called with each iterate.
    """
    if eps < 0:
        raise InputError(f"eps must be >= 0, got {eps}")
    if step <= 0:
        raise InputError(f"step must be > 0, got {step}")
    if iters < 0:
        raise InputError(f"iters must be >= 0, got {iters}")
    x = np.asarray(x, dtype=np.float32)
    if random_start and eps > 0:
        delta0 = rng.stream(seed, "pgd:init").uniform(x.size, -eps, eps).reshape(x.shape)
    else:
        delta0 = np.zeros_like(x)
    x_t = linf_project(x + delta0, x, eps)
    _assert_in_ball(x_t, x, eps)
    if record is not None:
        record(x_t)
    for _ in range(iters):
        g = input_gradient(model, params, x_t, x_star)
        x_t = linf_project(x_t + np.float32(step) * np.sign(g), x, eps)
        _assert_in_ball(x_t, x, eps)
        if record is not None:
            record(x_t)
    return x_t


def perturb(spec: PerturbationSpec, model, params, x: np.ndarray, x_star: np.ndarray) -> np.ndarray:
    """Apply one PerturbationSpec; gradient attacks target the given model."""
    spec.validate()
    if spec.kind == "gaussian":
        out = gaussian_perturb(x, spec.level, spec.seed)
    elif spec.kind == "fgsm":
        out = fgsm_attack(model, params, x, x_star, spec.level)
    else:
        out = pgd_attack(model, params, x, x_star, spec.level, spec.pgd_step,
                         spec.pgd_iters, spec.seed)
    if spec.clamp_to_range:
        out = np.clip(out, np.float32(-255.0), np.float32(255.0))
    return out
