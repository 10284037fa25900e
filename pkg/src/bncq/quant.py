"""Quantizers, binary activations and their straight-through backward rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def round_half_away(x):
    """Round to the nearest integer, ties away from zero (np.round rounds to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class BnQuantConfig:
    """Fixed-point grid for non-positive log-probabilities.

    ``bi`` integer bits and ``bf`` fractional bits; ``bf`` may be negative, in
    which case the grid step is coarser than one.
    """

    bi: int
    bf: int

    def __post_init__(self):
        if self.bi < 1:
            raise ValueError(f"bi must be >= 1, got {self.bi}")
        if self.bi + self.bf < 1:
            raise ValueError(f"bi + bf must be >= 1, got {self.bi} + {self.bf}")

    @property
    def bits(self) -> int:
        return self.bi + self.bf

    @property
    def step(self) -> float:
        return 2.0 ** (-self.bf)

    @property
    def bound(self) -> float:
        """Largest representable magnitude U."""
        return 2.0**self.bi - 2.0 ** (-self.bf)

    def grid(self) -> np.ndarray:
        """All representable values, ascending."""
        n = 2**self.bits
        return -self.step * np.arange(n - 1, -1, -1, dtype=np.float64)


@dataclass(frozen=True)
class DnnQuantConfig:
    b: int

    def __post_init__(self):
        if not 1 <= self.b <= 32:
            raise ValueError(f"b must be in [1, 32], got {self.b}")

    @property
    def levels(self) -> int:
        return 2**self.b - 1


def quantize_bn(theta, cfg: BnQuantConfig) -> np.ndarray:
    """Map log-probabilities onto the fixed-point grid of ``cfg``.

    Positive inputs are clipped to 0.
    """
    scale = 2.0**cfg.bf
    q = round_half_away(np.asarray(theta, dtype=np.float64) * scale) / scale
    return np.clip(q, -cfg.bound, 0.0)


def quantize_bn_backward(upstream_grad):
    # identity straight-through estimator
    return upstream_grad


def quantize_unit(v, b: int) -> np.ndarray:
    """Uniform b-bit quantization of v in [0, 1]."""
    n = 2.0**b - 1.0
    return round_half_away(n * np.asarray(v, dtype=np.float64)) / n


def quantize_dnn(w, cfg: DnnQuantConfig) -> np.ndarray:
    """Quantize weights to 2^B evenly spaced levels in [-1, 1].

    Equal to ``quantize_unit((clip(w) + 1) / 2, B) * 2 - 1``; the level is
    formed as ``(2k - n) / n`` so each output is the double nearest to it.
    """
    n = float(cfg.levels)
    v = (np.clip(np.asarray(w, dtype=np.float64), -1.0, 1.0) + 1.0) / 2.0
    k = round_half_away(n * v)
    return (2.0 * k - n) / n


def quantize_dnn_backward(upstream_grad):
    return upstream_grad


def dnn_grid_index(w_q, cfg: DnnQuantConfig) -> np.ndarray:
    """Integer level k in [0, 2^B - 1] of quantized weights."""
    return np.rint((np.asarray(w_q) + 1.0) / 2.0 * cfg.levels).astype(np.int64)


def dnn_grid_value(index, cfg: DnnQuantConfig) -> np.ndarray:
    # same operation order as quantize_dnn so indices round-trip bit-exactly
    n = float(cfg.levels)
    return (2.0 * np.asarray(index, dtype=np.float64) - n) / n


def stochastic_sign(a, u) -> np.ndarray:
    """+1 with probability (1 + a) / 2, using the supplied uniform draws ``u``."""
    p = (1.0 + np.clip(a, -1.0, 1.0)) / 2.0
    return np.where(np.asarray(u) <= p, 1.0, -1.0)


def sign(a) -> np.ndarray:
    return np.where(np.asarray(a) >= 0, 1.0, -1.0)


def sign_backward(a, upstream_grad):
    """tanh surrogate derivative."""
    return upstream_grad * (1.0 - np.tanh(a) ** 2)
