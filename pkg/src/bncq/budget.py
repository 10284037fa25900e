"""Parameter memory (bits) and per-prediction operation counts, plus budget-matched sizing.

Operation counts cover arithmetic only: one op per multiply-accumulate, per
batchnorm unit and per bias. Activations, pooling, table addressing and the
final argmax are free for both model families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .dnn import Arch, cnn_arch
from .model import BncModel, param_count
from .quant import BnQuantConfig

FLOAT_BITS = 32
BN_BITS_PER_UNIT = 64  # beta and gamma at 32 bits each
BIAS_BITS = 32


@dataclass(frozen=True)
class BudgetItem:
    component: str
    bits: int
    ops: int


@dataclass(frozen=True)
class BudgetReport:
    breakdown: tuple[BudgetItem, ...]

    @property
    def bits(self) -> int:
        return sum(i.bits for i in self.breakdown)

    @property
    def ops(self) -> int:
        return sum(i.ops for i in self.breakdown)

    def csv_row(self, model_id: str, error: float) -> str:
        return f"{model_id},{self.bits},{self.ops},{error!r}"


def _bits_per_param(cfg) -> int:
    return FLOAT_BITS if cfg is None or cfg == "float32" else cfg.bits


# ---------------------------------------------------------------------------
# BN classifiers


def bnc_report(model: BncModel, cfg: BnQuantConfig | str | None = None) -> BudgetReport:
    """Prior plus one entry per CPT; each contributes C accumulations."""
    b = _bits_per_param(cfg)
    c = model.num_classes
    items = [BudgetItem("prior", c * b, c)]
    for i, cpt in enumerate(model.cpts):
        items.append(BudgetItem(f"cpt{i}", cpt.size * b, c))
    return BudgetReport(tuple(items))


def bnc_bits(model: BncModel, cfg: BnQuantConfig | str | None = None) -> int:
    return param_count(model) * _bits_per_param(cfg)


def bnc_ops_for(d: int, num_classes: int) -> int:
    return (d + 1) * num_classes


def bnc_ops(model: BncModel) -> int:
    return bnc_ops_for(model.d, model.num_classes)


# ---------------------------------------------------------------------------
# DNNs


def dnn_report(arch: Arch, b: int | None = None) -> BudgetReport:
    """Weights at ``b`` bits (32 when None), batchnorm at 64 bits per unit, biases at 32 bits."""
    wb = FLOAT_BITS if b is None else int(b)
    shape = arch.input_shape
    items = []
    for k, (layer, out) in enumerate(zip(arch.layers, arch.shapes)):
        if layer.kind == "fc":
            n = shape[0] * layer.units
            items.append(BudgetItem(f"fc{k}.W", wb * n, n))
            if layer.has_bias:
                items.append(BudgetItem(f"fc{k}.b", BIAS_BITS * layer.units, layer.units))
        elif layer.kind == "conv":
            n = layer.channels * shape[0] * layer.kernel**2
            macs = n * out[1] * out[2]
            items.append(BudgetItem(f"conv{k}.W", wb * n, macs))
        elif layer.kind == "batchnorm":
            units = int(math.prod(shape))
            items.append(BudgetItem(f"bn{k}", BN_BITS_PER_UNIT * shape[0], units))
        shape = out
    return BudgetReport(tuple(items))


def dnn_bits(arch: Arch, b: int | None = None) -> int:
    return dnn_report(arch, b).bits


def dnn_ops(arch: Arch) -> int:
    return dnn_report(arch).ops


def fc_bits_for(h: float, n_layers: int, b: int, batchnorm: bool, d: int, c: int) -> float:
    """Bits of an ``n_layers`` FC net with equal hidden widths ``h`` (real-valued)."""
    hidden = n_layers - 1
    weights = d * h + (hidden - 1) * h * h + h * c
    return b * weights + BN_BITS_PER_UNIT * batchnorm * hidden * h + BIAS_BITS * c


def _positive_root(a: float, b: float, c: float) -> float:
    """Largest root of a x^2 + b x + c = 0 (linear when a == 0)."""
    if a == 0:
        return -c / b
    return (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)


def size_fc_for_bit_budget(target_bits: float, n_layers: int, b: int, batchnorm: bool, d: int, c: int) -> int:
    """Equal hidden width whose bit count is closest (by rounding) to ``target_bits``."""
    if n_layers < 2:
        raise ValueError("an FC net needs at least one hidden layer (n_layers >= 2)")
    fixed = BIAS_BITS * c
    if target_bits < fixed:
        raise ValueError(f"budget {target_bits} bits is below the output-bias cost {fixed}")
    hidden = n_layers - 1
    qa = b * (hidden - 1)
    qb = b * (d + c) + BN_BITS_PER_UNIT * batchnorm * hidden
    h = _positive_root(qa, qb, fixed - target_bits)
    return max(1, int(round(h)))


def _cnn_cost(c1: float, kind: str, n_conv: int, b: int, batchnorm: bool, input_shape, c: int, kernel: int) -> float:
    """Bits or ops of the 1- or 2-conv net with channels (c1, 2 c1), real-valued."""
    cin, h, w = input_shape
    k2 = kernel * kernel
    chans = [c1] if n_conv == 1 else [c1, 2 * c1]
    bits = ops = 0.0
    prev = cin
    for ch in chans:
        bits += b * prev * ch * k2 + BN_BITS_PER_UNIT * batchnorm * ch
        ops += h * w * prev * ch * k2 + batchnorm * h * w * ch
        h, w = h // 2, w // 2
        prev = ch
    bits += b * h * w * prev * c + BIAS_BITS * c
    ops += h * w * prev * c + c
    return bits if kind == "bits" else ops


def size_cnn_for_budget(
    target: float,
    kind: str,
    n_conv: int,
    b: int,
    batchnorm: bool,
    input_shape: Sequence[int],
    c: int,
    kernel: int = 3,
) -> list[int]:
    """Channel counts for 1 or 2 conv layers (second has twice the first) matching a bit or op target."""
    if kind not in ("bits", "ops"):
        raise ValueError("kind must be 'bits' or 'ops'")
    if n_conv not in (1, 2):
        raise ValueError("only 1 or 2 convolutional layers are supported")
    args = (kind, n_conv, b, batchnorm, tuple(input_shape), c, kernel)
    fixed = _cnn_cost(0.0, *args)
    if target < fixed:
        raise ValueError(f"budget {target} is below the fixed output-layer cost {fixed}")
    # cost(x) = qa x^2 + qb x + fixed; recover the coefficients from two evaluations
    f1, f2 = _cnn_cost(1.0, *args) - fixed, _cnn_cost(2.0, *args) - fixed
    qa = (f2 - 2 * f1) / 2
    qb = f1 - qa
    x = _positive_root(qa, qb, fixed - target)
    if n_conv == 1:
        return [max(1, int(round(x)))]
    return [max(1, int(round(x))), max(1, int(round(2 * x)))]


def cnn_for_budget(target, kind, n_conv, b, batchnorm, input_shape, c, activation="relu", kernel=3) -> Arch:
    chans = size_cnn_for_budget(target, kind, n_conv, b, batchnorm, input_shape, c, kernel)
    return cnn_arch(input_shape, c, chans, kernel, activation, batchnorm)
