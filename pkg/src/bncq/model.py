"""Naive Bayes / TAN classifiers over discrete features.

CPT layout: a feature's table has shape ``(K_parent, C, K_child)``; the child
value varies fastest, then the class, then the parent value. Features
without a feature parent use ``K_parent = 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .quant import BnQuantConfig, quantize_bn

NO_PARENT = -1


def normalize_logits(rho, axis: int = -1) -> np.ndarray:
    """Log-softmax along ``axis``."""
    rho = np.asarray(rho, dtype=np.float64)
    m = np.max(rho, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        lse = np.log(np.sum(np.exp(rho - m), axis=axis, keepdims=True)) + m
    return rho - lse


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


@dataclass
class TanStructure:
    """Feature parents (0-based, ``-1`` for class-only) under a fixed ordering."""

    parents: list[int]
    ordering: list[int] | None = None

    def __post_init__(self):
        self.parents = [int(p) for p in self.parents]
        d = len(self.parents)
        if self.ordering is None:
            self.ordering = list(range(d))
        self.ordering = [int(o) for o in self.ordering]
        if sorted(self.ordering) != list(range(d)):
            raise ValueError("ordering must be a permutation of the features")
        pos = {f: k for k, f in enumerate(self.ordering)}
        for i, p in enumerate(self.parents):
            if p == NO_PARENT:
                continue
            if not 0 <= p < d or pos[p] >= pos[i]:
                raise ValueError(f"parent {p} of feature {i} does not precede it in the ordering")

    @classmethod
    def naive_bayes(cls, d: int, ordering=None) -> "TanStructure":
        return cls([NO_PARENT] * d, ordering)

    @property
    def d(self) -> int:
        return len(self.parents)

    @property
    def is_naive_bayes(self) -> bool:
        return all(p == NO_PARENT for p in self.parents)

    def parent_cardinalities(self, cardinalities: Sequence[int]) -> list[int]:
        return [1 if p == NO_PARENT else int(cardinalities[p]) for p in self.parents]

    def to_dict(self) -> dict:
        return {"ordering": self.ordering, "parents": self.parents}


def param_count_for(cardinalities: Sequence[int], parents: Sequence[int], num_classes: int) -> int:
    total = num_classes
    for i, p in enumerate(parents):
        kp = 1 if p == NO_PARENT else cardinalities[p]
        total += cardinalities[i] * kp * num_classes
    return int(total)


@dataclass
class Cpt:
    """Normalized log-probabilities ``theta`` and optionally their quantized copy."""

    theta: np.ndarray
    theta_q: np.ndarray | None = None

    @classmethod
    def from_logits(cls, rho, quant: BnQuantConfig | None = None) -> "Cpt":
        theta = normalize_logits(rho)
        return cls(theta, None if quant is None else quantize_bn(theta, quant))

    @property
    def values(self) -> np.ndarray:
        return self.theta if self.theta_q is None else self.theta_q

    @property
    def size(self) -> int:
        return int(self.theta.size)


@dataclass
class BncModel:
    cardinalities: list[int]
    num_classes: int
    prior: Cpt  # theta shape (C,)
    cpts: list[Cpt]
    structure: TanStructure
    quant: BnQuantConfig | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cardinalities = [int(k) for k in self.cardinalities]
        c = self.num_classes
        if self.prior.theta.shape != (c,):
            raise ValueError("class prior must have shape (C,)")
        if len(self.cpts) != len(self.cardinalities) or self.structure.d != len(self.cardinalities):
            raise ValueError("number of CPTs does not match the number of features")
        for i, (cpt, kp) in enumerate(zip(self.cpts, self.structure.parent_cardinalities(self.cardinalities))):
            if cpt.theta.shape != (kp, c, self.cardinalities[i]):
                raise ValueError(f"CPT {i} has shape {cpt.theta.shape}, expected {(kp, c, self.cardinalities[i])}")

    @property
    def d(self) -> int:
        return len(self.cardinalities)

    @property
    def quantized(self) -> bool:
        return self.prior.theta_q is not None

    @classmethod
    def from_logits(cls, cardinalities, num_classes, prior_rho, rhos, structure, quant=None, meta=None) -> "BncModel":
        return cls(
            list(cardinalities),
            num_classes,
            Cpt.from_logits(prior_rho, quant),
            [Cpt.from_logits(r, quant) for r in rhos],
            structure,
            quant,
            dict(meta or {}),
        )

    @classmethod
    def uniform(cls, cardinalities, num_classes, structure=None) -> "BncModel":
        structure = structure or TanStructure.naive_bayes(len(cardinalities))
        kp = structure.parent_cardinalities(cardinalities)
        rhos = [np.zeros((kp[i], num_classes, k)) for i, k in enumerate(cardinalities)]
        return cls.from_logits(cardinalities, num_classes, np.zeros(num_classes), rhos, structure)

    def quantize(self, quant: BnQuantConfig) -> "BncModel":
        """Post-hoc quantization of the normalized parameters."""
        return BncModel(
            self.cardinalities,
            self.num_classes,
            Cpt(self.prior.theta, quantize_bn(self.prior.theta, quant)),
            [Cpt(c.theta, quantize_bn(c.theta, quant)) for c in self.cpts],
            self.structure,
            quant,
            dict(self.meta),
        )

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        def arr(c: Cpt):
            return c.values.ravel().tolist()

        return {
            "cardinalities": self.cardinalities,
            "num_classes": self.num_classes,
            "structure": self.structure.to_dict(),
            "quant": None if self.quant is None else {"bi": self.quant.bi, "bf": self.quant.bf},
            "quantized": self.quantized,
            "prior": arr(self.prior),
            "cpts": [arr(c) for c in self.cpts],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "BncModel":
        structure = TanStructure(obj["structure"]["parents"], obj["structure"]["ordering"])
        card = obj["cardinalities"]
        c = obj["num_classes"]
        quant = None if obj["quant"] is None else BnQuantConfig(**obj["quant"])
        kp = structure.parent_cardinalities(card)
        prior = np.array(obj["prior"], dtype=np.float64)
        tables = [np.array(t, dtype=np.float64).reshape(kp[i], c, card[i]) for i, t in enumerate(obj["cpts"])]
        if obj.get("quantized"):
            return cls(card, c, Cpt(prior, prior), [Cpt(t, t) for t in tables], structure, quant, obj.get("meta", {}))
        return cls(card, c, Cpt(prior), [Cpt(t) for t in tables], structure, quant, obj.get("meta", {}))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "BncModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def log_joint(model: BncModel, samples) -> np.ndarray:
    """log p(x, c) for every class; ``(N, C)`` for a batch, ``(C,)`` for one row."""
    x = np.asarray(samples, dtype=np.int64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.d:
        raise ValueError(f"sample has {x.shape[1]} features, model expects {model.d}")
    if x.size and (x.min() < 0 or np.any(x >= np.asarray(model.cardinalities))):
        raise ValueError("bin index out of range")
    out = np.broadcast_to(model.prior.values, (len(x), model.num_classes)).copy()
    zeros = np.zeros(len(x), dtype=np.int64)
    for i, (cpt, p) in enumerate(zip(model.cpts, model.structure.parents)):
        xp = zeros if p == NO_PARENT else x[:, p]
        out += cpt.values[xp, :, x[:, i]]
    return out[0] if single else out


def predict(model: BncModel, samples) -> np.ndarray:
    # argmax returns the first maximum: ties go to the smallest class index
    return np.argmax(log_joint(model, samples), axis=-1)


def error_rate(model: BncModel, samples, labels) -> float:
    return float(np.mean(predict(model, samples) != np.asarray(labels)))


def to_affine(model: BncModel) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``W`` (C, E) and bias ``b`` (C,) with ``W @ onehot(x) + b == log_joint``.

    The encoding is :func:`bncq.data.one_hot_encode` with the model's parents.
    """
    c = model.num_classes
    blocks = []
    for i, (cpt, p) in enumerate(zip(model.cpts, model.structure.parents)):
        t = cpt.values  # (Kp, C, Ki)
        # column x_i * Kp + x_p  <-  t[x_p, c, x_i]
        blocks.append(t.transpose(1, 2, 0).reshape(c, -1))
    w = np.concatenate(blocks, axis=1) if blocks else np.zeros((c, 0))
    return w, model.prior.values.copy()


def param_count(model: BncModel) -> int:
    return param_count_for(model.cardinalities, model.structure.parents, model.num_classes)
