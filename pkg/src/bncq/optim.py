"""Adam with an exponentially decaying learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels


@dataclass(frozen=True)
class OptimizerConfig:
    lr0: float = 3e-3
    epochs: int = 100
    batch_size: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_factor: float = 1e-3

    def __post_init__(self):
        if self.lr0 < 0 or not np.isfinite(self.lr0):
            raise ValueError("lr0 must be finite and >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")


def lr_schedule(epoch: float, cfg: OptimizerConfig) -> float:
    """lr0 * decay_factor ** (epoch / epochs)."""
    if not 0 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    return cfg.lr0 * cfg.decay_factor ** (epoch / cfg.epochs)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, cfg: OptimizerConfig, lr: float) -> None:
    """In-place bias-corrected Adam update of every array in ``params``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        if not (p.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous):
            raise ValueError("Adam parameters and state must be C-contiguous")
        _kernels.adam_update(
            p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1), m.reshape(-1), v.reshape(-1),
            float(lr), b1, b2, c1, c2, cfg.eps,
        )


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    train_err: list[float] = field(default_factory=list)
    test_err: list[float] = field(default_factory=list)

    def append(self, epoch, lr, train_loss, train_err=float("nan"), test_err=float("nan")):
        self.epoch.append(int(epoch))
        self.lr.append(float(lr))
        self.train_loss.append(float(train_loss))
        self.train_err.append(float(train_err))
        self.test_err.append(float(test_err))

    def __len__(self):
        return len(self.epoch)

    def to_csv(self) -> str:
        lines = ["epoch,lr,train_loss,train_err,test_err"]
        for row in zip(self.epoch, self.lr, self.train_loss, self.train_err, self.test_err):
            lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
        return "\n".join(lines) + "\n"
