"""Tri-modal cross-attention denoising autoencoder and robustness harness."""

from .tensor import Tape, Tensor, backward, grad_check
from .kernels import BACKEND

__all__ = ["Tape", "Tensor", "backward", "grad_check", "BACKEND"]
__version__ = "0.1.0"
