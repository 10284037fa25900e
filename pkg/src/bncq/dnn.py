"""Small fully connected and convolutional networks with hand-written backward passes.

Arrays are batch-first: dense activations are ``(N, U)``, feature maps are
``(N, channels, H, W)``. Convolutions use zero "same" padding and no bias;
hidden fully connected layers have no bias, the output layer does.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .model import logsumexp
from .quant import DnnQuantConfig, dnn_grid_index, dnn_grid_value, quantize_dnn, sign, sign_backward, stochastic_sign

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

KINDS = ("fc", "conv", "batchnorm", "maxpool", "relu", "sign", "stochastic-sign", "tanh", "flatten", "softmax")
WEIGHTED = ("fc", "conv")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0  # fc output units
    channels: int = 0  # conv output channels
    kernel: int = 3
    has_bias: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "fc" and self.units < 1:
            raise ValueError("fc layer needs units >= 1")
        if self.kind == "conv":
            if self.channels < 1:
                raise ValueError("conv layer needs channels >= 1")
            if self.kernel < 1 or self.kernel % 2 == 0:
                raise ValueError("conv kernel size must be odd and positive")


@dataclass
class Arch:
    input_shape: tuple[int, ...]
    layers: list[LayerSpec]

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.layers = [LayerSpec(**l) if isinstance(l, dict) else l for l in self.layers]
        self.shapes = infer_shapes(self.input_shape, self.layers)

    @property
    def num_classes(self) -> int:
        return self.shapes[-1][0]

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, obj) -> "Arch":
        return cls(tuple(obj["input_shape"]), [LayerSpec(**l) for l in obj["layers"]])


def infer_shapes(input_shape: tuple[int, ...], layers: Sequence[LayerSpec]) -> list[tuple[int, ...]]:
    """Per-sample output shape of every layer; raises if the layers do not compose."""
    shape = tuple(input_shape)
    out = []
    for k, l in enumerate(layers):
        if l.kind == "softmax" and k != len(layers) - 1:
            raise ValueError("softmax may only be the final layer")
        if l.kind == "fc":
            if len(shape) != 1:
                raise ValueError(f"layer {k}: fc needs a flat input, got {shape}")
            shape = (l.units,)
        elif l.kind == "conv":
            if len(shape) != 3:
                raise ValueError(f"layer {k}: conv needs a (channels, H, W) input, got {shape}")
            shape = (l.channels, shape[1], shape[2])
        elif l.kind == "maxpool":
            if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                raise ValueError(f"layer {k}: maxpool needs a feature map of at least 2x2, got {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif l.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif l.kind == "batchnorm" and len(shape) not in (1, 3):
            raise ValueError(f"layer {k}: batchnorm needs a flat or (channels, H, W) input")
        out.append(shape)
    return out


def fc_arch(input_dim: int, num_classes: int, hidden: Sequence[int], activation="relu", batchnorm=False) -> Arch:
    layers = []
    for h in hidden:
        layers.append(LayerSpec("fc", units=int(h)))
        if batchnorm:
            layers.append(LayerSpec("batchnorm"))
        layers.append(LayerSpec(activation))
    layers += [LayerSpec("fc", units=num_classes, has_bias=True), LayerSpec("softmax")]
    return Arch((input_dim,), layers)


def cnn_arch(input_shape, num_classes: int, channels: Sequence[int], kernel=3, activation="relu", batchnorm=False) -> Arch:
    layers = []
    for c in channels:
        layers.append(LayerSpec("conv", channels=int(c), kernel=kernel))
        if batchnorm:
            layers.append(LayerSpec("batchnorm"))
        layers += [LayerSpec(activation), LayerSpec("maxpool")]
    layers += [LayerSpec("flatten"), LayerSpec("fc", units=num_classes, has_bias=True), LayerSpec("softmax")]
    return Arch(tuple(input_shape), layers)


# ---------------------------------------------------------------------------
# layer kernels


class LayerCache(NamedTuple):
    layer: LayerSpec
    input_shape: tuple[int, ...]
    data: tuple


def softmax(a, axis: int = -1) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return np.exp(a - logsumexp(a, axis=axis, keepdims=True))


def glorot_uniform(shape, fan_in: int, fan_out: int, rng) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_layer(layer: LayerSpec, in_shape, rng) -> dict:
    if layer.kind == "fc":
        p = {"W": glorot_uniform((in_shape[0], layer.units), in_shape[0], layer.units, rng)}
        if layer.has_bias:
            p["b"] = np.zeros(layer.units)
        return p
    if layer.kind == "conv":
        k2 = layer.kernel * layer.kernel
        return {
            "W": glorot_uniform(
                (layer.channels, in_shape[0], layer.kernel, layer.kernel), in_shape[0] * k2, layer.channels * k2, rng
            )
        }
    if layer.kind == "batchnorm":
        u = in_shape[0]
        return {"gamma": np.ones(u), "beta": np.zeros(u), "running_mean": np.zeros(u), "running_var": np.ones(u)}
    return {}


def trainable_names(layer: LayerSpec) -> list[str]:
    if layer.kind == "fc":
        return ["W", "b"] if layer.has_bias else ["W"]
    if layer.kind == "conv":
        return ["W"]
    if layer.kind == "batchnorm":
        return ["gamma", "beta"]
    return []


def _im2col(x, k):
    n, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (N, C, H, W, k, k)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def _bn_axes(x):
    return (0,) if x.ndim == 2 else (0, 2, 3)


def _bn_view(v, x):
    return v if x.ndim == 2 else v[None, :, None, None]


def layer_forward(layer: LayerSpec, params: dict, x, mode: str = "train", rng=None, weight=None):
    """Apply one layer; ``weight`` overrides ``params["W"]`` (the quantized copy)."""
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    x = np.asarray(x, dtype=np.float64)
    kind = layer.kind
    if kind == "fc":
        w = params["W"] if weight is None else weight
        if x.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ValueError(f"fc expects (N, {w.shape[0]}) input, got {x.shape}")
        out = x @ w
        if layer.has_bias:
            out = out + params["b"]
        return out, LayerCache(layer, x.shape, (x, w))
    if kind == "conv":
        w = params["W"] if weight is None else weight
        if x.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ValueError(f"conv expects (N, {w.shape[1]}, H, W) input, got {x.shape}")
        n, _, h, wd = x.shape
        cols = _im2col(x, layer.kernel)
        out = (cols @ w.reshape(w.shape[0], -1).T).reshape(n, h, wd, -1).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), LayerCache(layer, x.shape, (cols, w))
    if kind == "batchnorm":
        if x.ndim not in (2, 4) or x.shape[1] != len(params["gamma"]):
            raise ValueError(f"batchnorm over {len(params['gamma'])} units got input {x.shape}")
        axes = _bn_axes(x)
        if mode == "train":
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            params["running_mean"] *= BN_MOMENTUM
            params["running_mean"] += (1.0 - BN_MOMENTUM) * mu
            params["running_var"] *= BN_MOMENTUM
            params["running_var"] += (1.0 - BN_MOMENTUM) * var
        else:
            mu, var = params["running_mean"], params["running_var"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - _bn_view(mu, x)) * _bn_view(inv, x)
        out = _bn_view(params["gamma"], x) * xhat + _bn_view(params["beta"], x)
        return out, LayerCache(layer, x.shape, (xhat, inv, mode))
    if kind == "maxpool":
        if x.ndim != 4:
            raise ValueError("maxpool expects (N, C, H, W) input")
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        win = x[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
        idx = np.argmax(win, axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return out, LayerCache(layer, x.shape, (idx,))
    if kind == "relu":
        return np.maximum(x, 0.0), LayerCache(layer, x.shape, (x,))
    if kind == "tanh":
        t = np.tanh(x)
        return t, LayerCache(layer, x.shape, (t,))
    if kind == "sign":
        return sign(x), LayerCache(layer, x.shape, (x,))
    if kind == "stochastic-sign":
        if mode == "train":
            if rng is None:
                raise ValueError("stochastic-sign needs an rng in train mode")
            out = stochastic_sign(x, rng.random(x.shape))
        else:
            out = sign(x)
        return out, LayerCache(layer, x.shape, (x,))
    if kind == "flatten":
        return x.reshape(len(x), -1), LayerCache(layer, x.shape, ())
    if kind == "softmax":
        p = softmax(x, axis=-1)
        return p, LayerCache(layer, x.shape, (p,))
    raise ValueError(f"unknown layer kind {kind!r}")


def layer_backward(layer: LayerSpec, params: dict, cache: LayerCache, g) -> tuple[np.ndarray, dict]:
    """Gradient w.r.t. the layer input and its trainable parameters."""
    if cache.layer != layer:
        raise ValueError("stale cache: produced by a different layer")
    g = np.asarray(g, dtype=np.float64)
    kind = layer.kind
    if kind == "fc":
        x, w = cache.data
        if g.shape != (x.shape[0], w.shape[1]):
            raise ValueError("stale cache: upstream gradient shape does not match")
        grads = {"W": x.T @ g}
        if layer.has_bias:
            grads["b"] = g.sum(axis=0)
        return g @ w.T, grads
    if kind == "conv":
        cols, w = cache.data
        n, cin, h, wd = cache.input_shape
        k, p = layer.kernel, layer.kernel // 2
        if g.shape != (n, w.shape[0], h, wd):
            raise ValueError("stale cache: upstream gradient shape does not match")
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, w.shape[0])
        gw = (g2.T @ cols).reshape(w.shape)
        dcols = (g2 @ w.reshape(w.shape[0], -1)).reshape(n, h, wd, cin, k, k)
        dxp = np.zeros((n, cin, h + 2 * p, wd + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + h, j : j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p : p + h, p : p + wd], {"W": gw}
    if kind == "batchnorm":
        xhat, inv, mode = cache.data
        if g.shape != xhat.shape:
            raise ValueError("stale cache: upstream gradient shape does not match")
        axes = _bn_axes(g)
        grads = {"gamma": (g * xhat).sum(axis=axes), "beta": g.sum(axis=axes)}
        dxhat = g * _bn_view(params["gamma"], g)
        if mode == "infer":
            return dxhat * _bn_view(inv, g), grads
        m = g.size // g.shape[1]
        s1 = _bn_view(dxhat.sum(axis=axes), g)
        s2 = _bn_view((dxhat * xhat).sum(axis=axes), g)
        return _bn_view(inv, g) * (dxhat - s1 / m - xhat * s2 / m), grads
    if kind == "maxpool":
        (idx,) = cache.data
        n, c, h, w = cache.input_shape
        h2, w2 = h // 2, w // 2
        if g.shape != (n, c, h2, w2):
            raise ValueError("stale cache: upstream gradient shape does not match")
        win = np.zeros((n, c, h2, w2, 4))
        np.put_along_axis(win, idx[..., None], g[..., None], axis=-1)
        dx = np.zeros(cache.input_shape)
        dx[:, :, : 2 * h2, : 2 * w2] = win.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
        return dx, {}
    if g.shape != cache.input_shape and kind != "flatten":
        raise ValueError("stale cache: upstream gradient shape does not match")
    if kind == "relu":
        return g * (cache.data[0] > 0), {}
    if kind == "tanh":
        return g * (1.0 - cache.data[0] ** 2), {}
    if kind in ("sign", "stochastic-sign"):
        return sign_backward(cache.data[0], g), {}
    if kind == "flatten":
        return g.reshape(cache.input_shape), {}
    if kind == "softmax":
        (p,) = cache.data
        return p * (g - (g * p).sum(axis=-1, keepdims=True)), {}
    raise ValueError(f"unknown layer kind {kind!r}")


# ---------------------------------------------------------------------------
# model


@dataclass
class DnnModel:
    arch: Arch
    params: list[dict]
    quant: DnnQuantConfig | None = None
    quantized: bool = False  # weights already lie on the quantization grid
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, arch: Arch, quant: DnnQuantConfig | None = None, rng=None) -> "DnnModel":
        rng = rng if rng is not None else np.random.default_rng(0)
        shapes = [arch.input_shape] + arch.shapes[:-1]
        params = [init_layer(l, s, rng) for l, s in zip(arch.layers, shapes)]
        return cls(arch, params, quant)

    def parameters(self) -> list[np.ndarray]:
        return [p[name] for l, p in zip(self.arch.layers, self.params) for name in trainable_names(l)]

    def _weight(self, layer, p):
        if layer.kind in WEIGHTED and self.quant is not None and not self.quantized:
            return quantize_dnn(p["W"], self.quant)
        return None

    def forward(self, x, train: bool = False, rng=None):
        """Logits (the input of the terminal softmax) and the per-layer caches."""
        mode = "train" if train else "infer"
        h = np.asarray(x, dtype=np.float64)
        if h.shape[1:] != self.arch.input_shape:
            raise ValueError(f"input shape {h.shape[1:]} does not match {self.arch.input_shape}")
        caches = []
        for layer, p in zip(self.arch.layers, self.params):
            if layer.kind == "softmax":
                break
            h, cache = layer_forward(layer, p, h, mode, rng, self._weight(layer, p))
            caches.append(cache)
        return h, caches

    def backward(self, caches, g_logits) -> list[np.ndarray]:
        """Gradients in :meth:`parameters` order; quantized weights pass the gradient straight through."""
        g = g_logits
        per_layer: list[dict] = [{} for _ in self.params]
        for k in range(len(caches) - 1, -1, -1):
            g, per_layer[k] = layer_backward(self.arch.layers[k], self.params[k], caches[k], g)
        return [per_layer[k][name] for k, l in enumerate(self.arch.layers) for name in trainable_names(l)]

    def predict_proba(self, x, batch_size: int = 1000) -> np.ndarray:
        out = [softmax(self.forward(x[s : s + batch_size])[0]) for s in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.arch.num_classes))

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)

    def error_rate(self, x, y) -> float:
        return float(np.mean(self.predict(x) != np.asarray(y)))

    def finalize(self) -> "DnnModel":
        """Copy whose stored weights are the quantized ones used in the forward pass."""
        params = [{k: v.copy() for k, v in p.items()} for p in self.params]
        for layer, p in zip(self.arch.layers, params):
            w = self._weight(layer, p)
            if w is not None:
                p["W"] = w
        return DnnModel(self.arch, params, self.quant, self.quant is not None, dict(self.meta))

    # -- serialization: JSON manifest + little-endian blob -----------------
    def save(self, path):
        """Write ``<path>.json`` and ``<path>.bin``; quantized weights are stored as grid indices."""
        path = Path(path)
        blob = bytearray()
        tensors = []
        for k, (layer, p) in enumerate(zip(self.arch.layers, self.params)):
            for name, arr in p.items():
                if name == "W" and self.quantized:
                    idx = dnn_grid_index(arr, self.quant)
                    dt = "<u1" if self.quant.b <= 8 else ("<u2" if self.quant.b <= 16 else "<u4")
                    data, enc = idx.astype(dt).tobytes(), "grid-index"
                else:
                    dt = "<f8"
                    data, enc = arr.astype(dt).tobytes(), "raw"
                tensors.append(
                    {"layer": k, "name": name, "shape": list(arr.shape), "dtype": dt, "encoding": enc,
                     "offset": len(blob), "nbytes": len(data)}
                )
                blob += data
        manifest = {
            "arch": self.arch.to_dict(),
            "quant": None if self.quant is None else {"b": self.quant.b},
            "quantized": self.quantized,
            "meta": self.meta,
            "blob": path.with_suffix(".bin").name,
            "tensors": tensors,
        }
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=1))
        path.with_suffix(".bin").write_bytes(bytes(blob))

    @classmethod
    def load(cls, path) -> "DnnModel":
        path = Path(path)
        manifest = json.loads(path.with_suffix(".json").read_text())
        blob = (path.parent / manifest["blob"]).read_bytes()
        arch = Arch.from_dict(manifest["arch"])
        quant = None if manifest["quant"] is None else DnnQuantConfig(**manifest["quant"])
        params: list[dict] = [{} for _ in arch.layers]
        for t in manifest["tensors"]:
            raw = np.frombuffer(blob, dtype=t["dtype"], count=int(np.prod(t["shape"])), offset=t["offset"])
            arr = raw.reshape(t["shape"])
            if t["encoding"] == "grid-index":
                arr = dnn_grid_value(arr, quant)
            params[t["layer"]][t["name"]] = np.array(arr, dtype=np.float64)
        return cls(arch, params, quant, manifest["quantized"], manifest["meta"])
