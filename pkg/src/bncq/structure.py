"""Model-size-aware TAN structure learning with straight-through Gumbel-softmax.

Every feature keeps one CPT per candidate parent (slot 0: no feature parent)
and a categorical distribution over those slots. Training samples a hard
parent assignment per mini-batch, evaluates the hybrid loss of the sampled
TAN, and adds the closed-form expected parameter count times ``lambda_ms``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .data import DiscreteDataset
from .losses import HybridConfig
from .model import NO_PARENT, BncModel, TanStructure, error_rate, logsumexp, normalize_logits
from .optim import AdamState, OptimizerConfig, TrainHistory, adam_step, lr_schedule
from .train import PackedCpts, _batches, _log_softmax, train_bnc


@dataclass
class StructureDistribution:
    """Per-feature logits over parent slots ``[none] + candidates[i]``.

    ``logits`` is ``(D, S + 1)``; slots beyond a feature's candidate count
    are -inf.
    """

    candidates: list[list[int]]
    logits: np.ndarray
    ordering: list[int]

    def __post_init__(self):
        self.candidates = [[int(j) for j in c] for c in self.candidates]
        self.ordering = [int(o) for o in self.ordering]
        d = len(self.candidates)
        pos = {f: k for k, f in enumerate(self.ordering)}
        if sorted(self.ordering) != list(range(d)):
            raise ValueError("ordering must be a permutation of the features")
        for i, cand in enumerate(self.candidates):
            if len(set(cand)) != len(cand):
                raise ValueError(f"duplicate candidate parents for feature {i}")
            for j in cand:
                if not 0 <= j < d or pos[j] >= pos[i]:
                    raise ValueError(f"candidate {j} of feature {i} does not precede it in the ordering")
        width = 1 + max((len(c) for c in self.candidates), default=0)
        self.logits = np.asarray(self.logits, dtype=np.float64).reshape(d, width)
        self.logits[~self.valid] = -np.inf

    @classmethod
    def uniform(cls, candidates, ordering) -> "StructureDistribution":
        width = 1 + max((len(c) for c in candidates), default=0)
        return cls(candidates, np.zeros((len(candidates), width)), ordering)

    @property
    def d(self) -> int:
        return len(self.candidates)

    @property
    def valid(self) -> np.ndarray:
        width = 1 + max((len(c) for c in self.candidates), default=0)
        counts = np.array([1 + len(c) for c in self.candidates], dtype=np.int64)
        return np.arange(width)[None, :] < counts[:, None]

    def parent_of_slot(self, i: int, s: int) -> int:
        return NO_PARENT if s == 0 else self.candidates[i][s - 1]

    def probs(self) -> np.ndarray:
        return np.exp(normalize_logits(self.logits))

    def slot_sizes(self, cardinalities: Sequence[int], num_classes: int) -> np.ndarray:
        """Parameter count of every (feature, slot) CPT; 0 for invalid slots."""
        out = np.zeros(self.logits.shape)
        for i, cand in enumerate(self.candidates):
            out[i, 0] = cardinalities[i] * num_classes
            for s, j in enumerate(cand, start=1):
                out[i, s] = cardinalities[i] * cardinalities[j] * num_classes
        return out

    def to_dict(self) -> dict:
        return {
            "ordering": self.ordering,
            "candidates": self.candidates,
            "phi": [p[: 1 + len(c)].tolist() for p, c in zip(self.probs(), self.candidates)],
            "logits": [lg[: 1 + len(c)].tolist() for lg, c in zip(self.logits, self.candidates)],
        }

    @classmethod
    def from_dict(cls, obj) -> "StructureDistribution":
        width = 1 + max((len(c) for c in obj["candidates"]), default=0)
        logits = np.full((len(obj["candidates"]), width), -np.inf)
        for i, lg in enumerate(obj["logits"]):
            logits[i, : len(lg)] = lg
        return cls(obj["candidates"], logits, obj["ordering"])


def random_candidates(d: int, max_parents: int = 8, seed: int = 0) -> tuple[list[int], list[list[int]]]:
    """Random feature ordering and, per feature, a random subset of earlier features."""
    rng = np.random.default_rng(seed)
    ordering = [int(v) for v in rng.permutation(d)]
    candidates: list[list[int]] = [[] for _ in range(d)]
    for k, f in enumerate(ordering):
        earlier = ordering[:k]
        if len(earlier) > max_parents:
            earlier = [int(v) for v in rng.choice(earlier, size=max_parents, replace=False)]
        candidates[f] = sorted(earlier)
    return ordering, candidates


@dataclass
class CptBank:
    """Class prior plus, for every feature, one normalized CPT per parent slot."""

    prior: np.ndarray  # (C,)
    tables: list[list[np.ndarray]]  # tables[i][s] has shape (K_parent, C, K_i)


@dataclass(frozen=True)
class SizePenaltyConfig:
    lambda_ms: float = 0.0
    tau: float = 1.0
    samples_per_step: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.lambda_ms) and self.lambda_ms >= 0):
            raise ValueError("lambda_ms must be finite and >= 0")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError("tau must be finite and > 0")
        if self.samples_per_step < 1:
            raise ValueError("samples_per_step must be >= 1")


def sample_structure(dist: StructureDistribution, tau: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """One straight-through Gumbel-softmax draw: (hard one-hot, soft relaxation)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    valid = dist.valid
    u = rng.random(dist.logits.shape)
    gumbel = -np.log(-np.log(np.clip(u, 1e-300, None)))
    z = np.where(valid, (dist.logits + gumbel) / tau, -np.inf)
    soft = np.exp(z - logsumexp(z, axis=1, keepdims=True))
    hard = np.zeros_like(soft)
    hard[np.arange(dist.d), np.argmax(z, axis=1)] = 1.0
    return hard, soft


def gumbel_softmax_backward(soft: np.ndarray, g_sample: np.ndarray, tau: float) -> np.ndarray:
    """Gradient w.r.t. the logits, routing the hard sample's gradient through the soft one."""
    return soft * (g_sample - (soft * g_sample).sum(axis=1, keepdims=True)) / tau


def structure_log_joint(bank: CptBank, dist: StructureDistribution, s: np.ndarray, samples) -> np.ndarray:
    """Class log-joints ``(N, C)`` as a combination of all slot CPTs weighted by ``s``."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.int64))
    s = np.asarray(s, dtype=np.float64)
    if s.shape != dist.logits.shape or x.shape[1] != dist.d:
        raise ValueError("structure weights or samples do not match the distribution")
    out = np.tile(bank.prior, (len(x), 1))
    for i in range(dist.d):
        for slot, table in enumerate(bank.tables[i]):
            if s[i, slot] == 0.0:
                continue
            j = dist.parent_of_slot(i, slot)
            xp = np.zeros(len(x), dtype=np.int64) if j == NO_PARENT else x[:, j]
            out += s[i, slot] * table[xp, :, x[:, i]]
    return out


def expected_model_size(dist: StructureDistribution, cardinalities, num_classes: int) -> float:
    sizes = dist.slot_sizes(cardinalities, num_classes)
    return float(num_classes + (dist.probs() * sizes).sum())


def expected_model_size_grad(dist: StructureDistribution, cardinalities, num_classes: int) -> np.ndarray:
    """Gradient of :func:`expected_model_size` with respect to the logits."""
    phi = dist.probs()
    sizes = dist.slot_sizes(cardinalities, num_classes)
    return phi * (sizes - (phi * sizes).sum(axis=1, keepdims=True))


def select_map_structure(dist: StructureDistribution) -> TanStructure:
    # argmax keeps the first maximum, i.e. slot 0 (no parent) on ties
    slots = np.argmax(dist.logits, axis=1)
    return TanStructure([dist.parent_of_slot(i, int(s)) for i, s in enumerate(slots)], dist.ordering)


class StructureTrainer:
    """Unnormalized bank logits, structure logits and the joint forward/backward pass."""

    def __init__(self, data: DiscreteDataset, dist: StructureDistribution, rng):
        self.cardinalities = data.cardinalities
        self.num_classes = data.num_classes
        self.dist = dist
        valid = dist.valid
        self.slot_index = np.full(valid.shape, -1, dtype=np.int64)
        children, parents = [], []
        for i in range(dist.d):
            for s in range(1 + len(dist.candidates[i])):
                self.slot_index[i, s] = len(children)
                children.append(i)
                parents.append(dist.parent_of_slot(i, s))
        self.table_feature = np.asarray(children, dtype=np.int64)
        self.packed = PackedCpts(data.cardinalities, children, parents, data.num_classes)
        self.prior_rho = rng.uniform(-0.1, 0.1, size=self.num_classes)
        self.rho = rng.uniform(-0.1, 0.1, size=self.packed.shape)
        self.sizes = dist.slot_sizes(data.cardinalities, data.num_classes)
        self.flat_valid = valid.reshape(-1)

    def table_weights(self, s: np.ndarray) -> np.ndarray:
        return s.reshape(-1)[self.flat_valid]

    def bank(self) -> CptBank:
        theta = self.packed.normalize(self.rho)
        tables = self.packed.tables(theta)
        per_feature: list[list[np.ndarray]] = [[] for _ in range(self.dist.d)]
        for v, i in enumerate(self.table_feature):
            per_feature[i].append(tables[v])
        return CptBank(_log_softmax(self.prior_rho), per_feature)

    def loss_and_grads(self, rows: np.ndarray, y, hyb: HybridConfig, penalty: SizePenaltyConfig, rng):
        """Monte Carlo estimate of the size-penalized structure loss and its gradients."""
        theta_c = _log_softmax(self.prior_rho)
        theta, probs = self.packed.forward(self.rho)
        per_table = _kernels.gather_rows(theta, rows)  # (B, V, C)
        g_theta = np.zeros(self.packed.shape)
        g_logits = np.zeros(self.dist.logits.shape)
        g_c = np.zeros(self.num_classes)
        total = 0.0
        m = penalty.samples_per_step
        for _ in range(m):
            hard, soft = sample_structure(self.dist, penalty.tau, rng)
            w = self.table_weights(hard)
            joint = theta_c + np.einsum("nvc,v->nc", per_table, w)
            loss, g_joint = _kernels.hybrid_loss_grad(joint, y, hyb.lambda_hyb, hyb.gamma_hyb, hyb.eta_hyb)
            total += loss / m
            g_w = np.einsum("nvc,nc->v", per_table, g_joint)
            g_s = np.zeros(hard.size)
            g_s[self.flat_valid] = g_w
            g_logits += gumbel_softmax_backward(soft, g_s.reshape(hard.shape), penalty.tau) / m
            g_theta += _kernels.scatter_rows_weighted(rows, g_joint, w, self.packed.rows) / m
            g_c += g_joint.sum(axis=0) / m
        if penalty.lambda_ms > 0:
            phi = self.dist.probs()
            total += penalty.lambda_ms * float(self.num_classes + (phi * self.sizes).sum())
            g_logits += penalty.lambda_ms * phi * (self.sizes - (phi * self.sizes).sum(axis=1, keepdims=True))
        g_rho = self.packed.backward(probs, g_theta)
        g_prior = g_c - np.exp(theta_c) * g_c.sum()
        g_logits[~self.dist.valid] = 0.0
        return total, [g_prior, g_rho, g_logits]

    def extract(self, structure: TanStructure):
        """Prior logits and per-feature logits of the slots selected by ``structure``."""
        rhos = self.packed.tables(self.rho)
        tables = []
        for i, p in enumerate(structure.parents):
            s = 0 if p == NO_PARENT else 1 + self.dist.candidates[i].index(p)
            tables.append(rhos[self.slot_index[i, s]])
        return self.prior_rho.copy(), tables


def structure_loss(dist, trainer: StructureTrainer, samples, labels, hyb, penalty, rng):
    """Size-penalized structure loss on one batch: ``(loss, [g_prior, g_bank, g_logits])``."""
    rows = trainer.packed.row_index(np.asarray(samples, dtype=np.int64))
    trainer.dist = dist
    return trainer.loss_and_grads(rows, np.asarray(labels), hyb, penalty, rng)


class StructureResult(NamedTuple):
    structure: TanStructure
    model: BncModel
    history: TrainHistory
    distribution: StructureDistribution
    finetune_history: TrainHistory | None = None


def train_structure(
    data: DiscreteDataset,
    candidates: list[list[int]] | None = None,
    ordering: list[int] | None = None,
    hyb: HybridConfig = HybridConfig(),
    opt: OptimizerConfig = OptimizerConfig(),
    penalty: SizePenaltyConfig = SizePenaltyConfig(),
    seed: int = 0,
    test: DiscreteDataset | None = None,
    finetune_fraction: float = 0.1,
    max_parents: int = 8,
    eval_every: int = 1,
) -> StructureResult:
    """Jointly learn parent distributions and all candidate CPTs, then pick the MAP TAN.

    Without ``candidates`` a seeded random ordering and random candidate
    subsets of size ``max_parents`` are drawn. The selected structure's CPTs
    are taken from the bank and fine-tuned for ``finetune_fraction`` of the
    epoch budget at the final learning rate.
    """
    if candidates is None:
        ordering, candidates = random_candidates(data.d, max_parents, seed)
    elif ordering is None:
        ordering = list(range(data.d))
    dist = StructureDistribution.uniform(candidates, ordering)
    rng = np.random.default_rng(seed)
    tr = StructureTrainer(data, dist, rng)
    params = [tr.prior_rho, tr.rho, dist.logits]
    state = AdamState.zeros_like(params)
    hist = TrainHistory()
    rows = tr.packed.row_index(data.samples)
    for epoch in range(opt.epochs):
        lr = lr_schedule(epoch, opt)
        losses = []
        for b in _batches(data.n, opt.batch_size, rng):
            loss, grads = tr.loss_and_grads(rows[b], data.labels[b], hyb, penalty, rng)
            adam_step(params, grads, state, opt, lr)
            dist.logits[~dist.valid] = -np.inf
            losses.append(loss * len(b))
        train_err = test_err = float("nan")
        if (epoch + 1) % eval_every == 0 or epoch + 1 == opt.epochs:
            m = _map_model(tr)
            train_err = error_rate(m, data.samples, data.labels)
            if test is not None:
                test_err = error_rate(m, test.samples, test.labels)
        hist.append(epoch, lr, sum(losses) / data.n, train_err, test_err)

    structure = select_map_structure(dist)
    init = tr.extract(structure)
    ft_epochs = int(round(finetune_fraction * opt.epochs))
    ft_hist = None
    if ft_epochs > 0:
        ft_opt = replace(opt, lr0=lr_schedule(opt.epochs, opt), epochs=ft_epochs, decay_factor=1.0)
        model, ft_hist = train_bnc(
            data, structure, None, hyb, ft_opt, seed + 1, test, eval_every=ft_epochs, init_tables=init
        )
    else:
        model = BncModel.from_logits(data.cardinalities, data.num_classes, init[0], init[1], structure)
    model.meta.update({"seed": seed, "lr0": opt.lr0, "lambda_ms": penalty.lambda_ms})
    return StructureResult(structure, model, hist, dist, ft_hist)


def _map_model(tr: StructureTrainer) -> BncModel:
    structure = select_map_structure(tr.dist)
    prior, tables = tr.extract(structure)
    return BncModel.from_logits(tr.cardinalities, tr.num_classes, prior, tables, structure)


def save_structure(result: StructureResult, path):
    obj = {"structure": result.structure.to_dict(), "distribution": result.distribution.to_dict()}
    Path(path).write_text(json.dumps(obj, indent=1))
