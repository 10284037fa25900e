"""Quantization-aware training loops for BN classifiers and small DNNs."""

from __future__ import annotations

import numpy as np

from . import _kernels
from .data import DiscreteDataset
from .losses import HybridConfig, cross_entropy_from_logits
from .model import NO_PARENT, BncModel, TanStructure, error_rate
from .optim import AdamState, OptimizerConfig, TrainHistory, adam_step, lr_schedule
from .quant import BnQuantConfig, DnnQuantConfig, quantize_bn


class PackedCpts:
    """A set of CPTs stored as the rows of one ``(R, C)`` matrix.

    Table ``v`` describes child feature ``children[v]`` conditioned on the
    class and on ``parents[v]`` (``-1``: class only). Its rows start at
    ``offsets[v]``; row ``offsets[v] + x_parent * K_child + x_child`` holds the
    class-wise log-probabilities of that configuration. Every run of
    ``K_child`` rows sharing a parent value is one normalization segment.
    """

    def __init__(self, cardinalities, children, parents, num_classes: int):
        self.cardinalities = np.asarray(cardinalities, dtype=np.int64)
        self.children = np.asarray(children, dtype=np.int64)
        self.parents = np.asarray(parents, dtype=np.int64)
        self.num_classes = int(num_classes)
        v = len(self.children)
        kc = self.cardinalities[self.children] if v else np.zeros(0, dtype=np.int64)
        kp = np.where(self.parents == NO_PARENT, 1, self.cardinalities[np.maximum(self.parents, 0)]) if v else kc
        self.child_card = kc
        self.parent_card = kp
        block = kp * kc
        self.offsets = np.concatenate([[0], np.cumsum(block)[:-1]]).astype(np.int64) if v else kc
        self.rows = int(block.sum())
        self.shape = (self.rows, self.num_classes)
        self.seg_len = np.repeat(kc, kp).astype(np.int64)
        self.seg_start = np.concatenate([[0], np.cumsum(self.seg_len)[:-1]]).astype(np.int64)
        self.sizes = (block * self.num_classes).astype(np.int64)

    def forward(self, rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Log-probabilities and probabilities over the child values of every (table, parent value, class)."""
        return _kernels.segment_log_softmax(rho, self.seg_start, self.seg_len)

    def normalize(self, rho: np.ndarray) -> np.ndarray:
        return self.forward(rho)[0]

    def backward(self, probs: np.ndarray, g_theta: np.ndarray) -> np.ndarray:
        """Gradient with respect to rho given the gradient with respect to theta."""
        return _kernels.segment_log_softmax_backward(probs, g_theta, self.seg_start, self.seg_len)

    def row_index(self, x: np.ndarray) -> np.ndarray:
        """Row ``(N, V)`` each sample reads from every table."""
        x = np.asarray(x, dtype=np.int64)
        xc = x[:, self.children]
        xp = np.where(self.parents[None, :] == NO_PARENT, 0, x[:, np.maximum(self.parents, 0)])
        return self.offsets[None, :] + xp * self.child_card[None, :] + xc

    def tables(self, values: np.ndarray) -> list[np.ndarray]:
        """Per-table arrays in the public ``(K_parent, C, K_child)`` layout."""
        out = []
        for v in range(len(self.children)):
            kp, kc = self.parent_card[v], self.child_card[v]
            blk = values[self.offsets[v] : self.offsets[v] + kp * kc]
            out.append(blk.reshape(kp, kc, self.num_classes).transpose(0, 2, 1).copy())
        return out

    def pack(self, tables) -> np.ndarray:
        out = np.zeros(self.shape)
        for v, t in enumerate(tables):
            kp, c, kc = t.shape
            out[self.offsets[v] : self.offsets[v] + kp * kc] = t.transpose(0, 2, 1).reshape(kp * kc, c)
        return out


def _init_rho(rng, shape):
    return rng.uniform(-0.1, 0.1, size=shape)


def _log_softmax(r):
    m = r.max()
    return r - (np.log(np.exp(r - m).sum()) + m)


class BncTrainer:
    """Unnormalized parameters of a fixed-structure BNC plus their forward/backward pass."""

    def __init__(self, cardinalities, num_classes, structure: TanStructure, quant: BnQuantConfig | None, rng):
        self.structure = structure
        self.quant = quant
        self.cardinalities = list(cardinalities)
        self.num_classes = num_classes
        d = len(cardinalities)
        self.packed = PackedCpts(cardinalities, np.arange(d), structure.parents, num_classes)
        self.prior_rho = _init_rho(rng, (num_classes,))
        self.rho = _init_rho(rng, self.packed.shape)

    def loss_and_grads(self, rows: np.ndarray, y, hyb: HybridConfig):
        theta_c = _log_softmax(self.prior_rho)
        theta, probs = self.packed.forward(self.rho)
        qc, q = theta_c, theta
        if self.quant is not None:
            qc, q = quantize_bn(theta_c, self.quant), quantize_bn(theta, self.quant)
        joint = _kernels.gather_rows_sum(q, rows) + qc
        loss, g_joint = _kernels.hybrid_loss_grad(joint, y, hyb.lambda_hyb, hyb.gamma_hyb, hyb.eta_hyb)
        # straight-through: the gradient w.r.t. theta_q is used as the gradient w.r.t. theta
        g_theta = _kernels.scatter_rows(rows, g_joint, self.packed.rows)
        g_rho = self.packed.backward(probs, g_theta)
        g_c = g_joint.sum(axis=0)
        g_prior = g_c - np.exp(theta_c) * g_c.sum()
        return loss, [g_prior, g_rho]

    def model(self, meta=None) -> BncModel:
        return BncModel.from_logits(
            self.cardinalities,
            self.num_classes,
            self.prior_rho,
            self.packed.tables(self.rho),
            self.structure,
            self.quant,
            meta,
        )


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield perm[s : s + batch_size]


def train_bnc(
    data: DiscreteDataset,
    structure: TanStructure | None = None,
    quant: BnQuantConfig | None = None,
    hyb: HybridConfig = HybridConfig(),
    opt: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    test: DiscreteDataset | None = None,
    eval_every: int = 1,
    init_tables: tuple[np.ndarray, list[np.ndarray]] | None = None,
) -> tuple[BncModel, TrainHistory]:
    """Train CPTs of a fixed structure with the hybrid loss.

    With ``quant`` set, the forward pass uses quantized log-probabilities and
    the real-valued logits are updated through an identity straight-through
    estimator. ``init_tables`` = (prior logits, per-feature logits) replaces
    the uniform random initialization.
    """
    structure = structure or TanStructure.naive_bayes(data.d)
    if structure.d != data.d:
        raise ValueError("structure and data differ in the number of features")
    rng = np.random.default_rng(seed)
    tr = BncTrainer(data.cardinalities, data.num_classes, structure, quant, rng)
    if init_tables is not None:
        tr.prior_rho = np.array(init_tables[0], dtype=np.float64)
        tr.rho = tr.packed.pack(init_tables[1])
    params = [tr.prior_rho, tr.rho]
    state = AdamState.zeros_like(params)
    hist = TrainHistory()
    rows = tr.packed.row_index(data.samples)
    for epoch in range(opt.epochs):
        lr = lr_schedule(epoch, opt)
        losses = []
        for b in _batches(data.n, opt.batch_size, rng):
            loss, grads = tr.loss_and_grads(rows[b], data.labels[b], hyb)
            adam_step(params, grads, state, opt, lr)
            losses.append(loss * len(b))
        train_err = test_err = float("nan")
        if (epoch + 1) % eval_every == 0 or epoch + 1 == opt.epochs:
            m = tr.model()
            train_err = error_rate(m, data.samples, data.labels)
            if test is not None:
                test_err = error_rate(m, test.samples, test.labels)
        hist.append(epoch, lr, sum(losses) / data.n, train_err, test_err)
    return tr.model({"seed": seed, "lr0": opt.lr0}), hist


# ---------------------------------------------------------------------------
# DNN


def train_dnn(
    x: np.ndarray,
    y: np.ndarray,
    arch,
    quant: DnnQuantConfig | None = None,
    opt: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    x_test: np.ndarray | None = None,
    y_test: np.ndarray | None = None,
    eval_every: int = 1,
):
    """Train a :class:`bncq.dnn.DnnModel` built from ``arch`` with cross-entropy.

    Weights are quantized in the forward pass when ``quant`` is given; the
    real-valued weights receive the gradient of the quantized ones.
    """
    from .dnn import DnnModel

    rng = np.random.default_rng(seed)
    model = DnnModel.build(arch, quant, rng)
    params = model.parameters()
    state = AdamState.zeros_like(params)
    hist = TrainHistory()
    y = np.asarray(y)
    for epoch in range(opt.epochs):
        lr = lr_schedule(epoch, opt)
        losses = []
        for b in _batches(len(x), opt.batch_size, rng):
            logits, caches = model.forward(x[b], train=True, rng=rng)
            loss, _, g = cross_entropy_from_logits(logits, y[b])
            grads = model.backward(caches, g)
            adam_step(params, grads, state, opt, lr)
            losses.append(loss * len(b))
        train_err = test_err = float("nan")
        if (epoch + 1) % eval_every == 0 or epoch + 1 == opt.epochs:
            train_err = model.error_rate(x, y)
            if x_test is not None:
                test_err = model.error_rate(x_test, y_test)
        hist.append(epoch, lr, sum(losses) / len(x), train_err, test_err)
    model.meta.update({"seed": seed, "lr0": opt.lr0})
    return model.finalize(), hist
