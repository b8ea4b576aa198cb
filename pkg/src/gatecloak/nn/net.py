"""Layer-spec driven network assembly with input-gradient support.

Dense layers require an explicit flatten spec before them; shape problems
surface at build time rather than at the first forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .layers import F32

LAYER_KINDS = ("conv2d_relu", "maxpool", "dropout", "flatten",
               "dense_relu", "dense_linear")


class ShapeUnderflow(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        p = dict(self.params)
        if self.kind == "conv2d_relu":
            if p.pop("kernel_side", 3) != 3:
                raise ValueError("only 3x3 conv kernels are supported")
            if p.pop("filters", 0) <= 0:
                raise ValueError("conv needs a positive filter count")
        elif self.kind == "maxpool":
            if p.pop("side", 3) != 3 or p.pop("stride", 3) != 3:
                raise ValueError("only 3x3 stride-3 pooling is supported")
        elif self.kind == "dropout":
            rate = p.pop("rate", None)
            if rate is None or not 0.0 < rate < 1.0:
                raise L.RateOutOfRange(f"dropout rate {rate} not in (0, 1)")
        elif self.kind in ("dense_relu", "dense_linear"):
            if p.pop("units", 0) <= 0:
                raise ValueError("dense needs a positive unit count")
        if p:
            raise ValueError(f"unexpected params for {self.kind}: {sorted(p)}")


@dataclass
class GradResult:
    param_grads: list
    input_grad: np.ndarray


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(F32)


class Network:
    """Feed-forward stack over float32 NHWC batches.

    Parameters are initialized from per-layer seeded streams, and each dropout
    layer owns its own stream, so single-threaded runs with a fixed seed give
    bit-identical trajectories.
    """

    def __init__(self, specs, input_shape, seed: int):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec(*s) for s in specs]
        if len(input_shape) != 3:
            raise L.ShapeMismatch(f"input shape must be (H, W, C), got {input_shape}")
        self.input_shape = tuple(int(d) for d in input_shape)
        self.seed = int(seed)
        self.params = []
        self.shapes = [self.input_shape]
        self._dropout_rngs = {}
        cur = self.input_shape
        for i, spec in enumerate(self.specs):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=self.seed, spawn_key=(i,)))
            if spec.kind == "conv2d_relu":
                if len(cur) != 3:
                    raise L.ShapeMismatch(f"layer {i}: conv needs spatial input, have {cur}")
                h, w, c = cur
                if h < 3 or w < 3:
                    raise ShapeUnderflow(f"layer {i}: {h}x{w} too small for 3x3 conv")
                f = spec.params["filters"]
                self.params.append({
                    "w": _glorot(rng, (3, 3, c, f), 9 * c, 9 * f),
                    "b": np.zeros(f, F32),
                })
                cur = (h - 2, w - 2, f)
            elif spec.kind == "maxpool":
                if len(cur) != 3:
                    raise L.ShapeMismatch(f"layer {i}: pool needs spatial input, have {cur}")
                h, w, c = cur
                if h < 3 or w < 3:
                    raise ShapeUnderflow(f"layer {i}: {h}x{w} too small for 3x3 pooling")
                self.params.append({})
                cur = (h // 3, w // 3, c)
            elif spec.kind == "dropout":
                self.params.append({})
                self._dropout_rngs[i] = np.random.default_rng(
                    np.random.SeedSequence(entropy=self.seed, spawn_key=(0xD0, i)))
            elif spec.kind == "flatten":
                self.params.append({})
                cur = (int(np.prod(cur)),)
            else:
                if len(cur) != 1:
                    raise L.ShapeMismatch(
                        f"layer {i}: dense needs a flatten first, have {cur}")
                d, u = cur[0], spec.params["units"]
                self.params.append({
                    "w": _glorot(rng, (d, u), d, u),
                    "b": np.zeros(u, F32),
                })
                cur = (u,)
            self.shapes.append(cur)
        if len(cur) != 1:
            raise L.ShapeMismatch(f"network must end in a dense layer, ends with {cur}")
        self.num_classes = cur[0]

    @property
    def num_params(self) -> int:
        return sum(int(a.size) for lp in self.params for a in lp.values())

    def _check_input(self, x):
        x = np.asarray(x, F32)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise L.ShapeMismatch(f"input {x.shape[1:]} vs expected {self.input_shape}")
        return x

    def forward(self, x, training: bool = False):
        """Returns (logits, caches); caches feed backward()."""
        x = self._check_input(x)
        L.ensure_finite("input", x)
        caches = []
        for i, spec in enumerate(self.specs):
            lp = self.params[i]
            if spec.kind == "conv2d_relu":
                x, cache = L.conv2d_forward(x, lp["w"], lp["b"], relu=True)
            elif spec.kind == "maxpool":
                x, cache = L.maxpool_forward(x)
            elif spec.kind == "dropout":
                x, cache = L.dropout_forward(
                    x, spec.params["rate"], training, self._dropout_rngs.get(i))
            elif spec.kind == "flatten":
                x, cache = L.flatten_forward(x)
            else:
                x, cache = L.dense_forward(
                    x, lp["w"], lp["b"], relu=spec.kind == "dense_relu")
            caches.append(cache)
        L.ensure_finite("logits", x)
        return x, caches

    def backward(self, dlogits, caches, need_param_grads: bool = True) -> GradResult:
        grads = [None] * len(self.specs)
        d = np.asarray(dlogits, F32)
        for i in range(len(self.specs) - 1, -1, -1):
            spec, cache = self.specs[i], caches[i]
            if spec.kind == "conv2d_relu":
                d, dw, db = L.conv2d_backward(d, cache, need_param_grads)
                grads[i] = {"w": dw, "b": db} if need_param_grads else {}
            elif spec.kind == "maxpool":
                d = L.maxpool_backward(d, cache)
                grads[i] = {}
            elif spec.kind == "dropout":
                d = L.dropout_backward(d, cache)
                grads[i] = {}
            elif spec.kind == "flatten":
                d = L.flatten_backward(d, cache)
                grads[i] = {}
            else:
                d, dw, db = L.dense_backward(d, cache, need_param_grads)
                grads[i] = {"w": dw, "b": db} if need_param_grads else {}
        return GradResult(grads, d)

    def loss_and_grads(self, x, labels):
        logits, caches = self.forward(x, training=True)
        loss, dlogits = L.softmax_cross_entropy(logits, labels)
        return loss, self.backward(dlogits, caches, need_param_grads=True)

    def logits(self, x):
        """Inference forward that drops per-layer caches as it goes; use this
        when no backward pass will follow (keeps peak memory near two layers)."""
        x = self._check_input(x)
        L.ensure_finite("input", x)
        for i, spec in enumerate(self.specs):
            lp = self.params[i]
            if spec.kind == "conv2d_relu":
                x = L.conv2d_forward(x, lp["w"], lp["b"], relu=True)[0]
            elif spec.kind == "maxpool":
                x = L.maxpool_forward(x)[0]
            elif spec.kind == "dropout":
                pass
            elif spec.kind == "flatten":
                x = L.flatten_forward(x)[0]
            else:
                x = L.dense_forward(x, lp["w"], lp["b"],
                                    relu=spec.kind == "dense_relu")[0]
        L.ensure_finite("logits", x)
        return x

    def predict_proba(self, x):
        return L.softmax(self.logits(x))

    def predict(self, x):
        return self.logits(x).argmax(axis=1)

    def _targets(self, targets, n):
        t = np.asarray(targets)
        if t.ndim == 0:
            t = np.full(n, int(t))
        if t.shape != (n,):
            raise L.ShapeMismatch(f"targets {t.shape} vs batch {n}")
        if t.min() < 0 or t.max() >= self.num_classes:
            raise L.TargetOutOfRange(f"targets outside [0, {self.num_classes})")
        return t

    def input_gradient(self, x, target):
        """d softmax-output[target] / d input, shaped like x."""
        x = self._check_input(x)
        logits, caches = self.forward(x, training=False)
        t = self._targets(target, x.shape[0])
        p = L.softmax(logits)
        rows = np.arange(x.shape[0])
        pt = p[rows, t]
        dlogits = -p * pt[:, None]
        dlogits[rows, t] += pt
        return self.backward(dlogits, caches, need_param_grads=False).input_grad

    def logit_input_gradient(self, x, target):
        """d logits[target] / d input, shaped like x."""
        x = self._check_input(x)
        logits, caches = self.forward(x, training=False)
        t = self._targets(target, x.shape[0])
        dlogits = np.zeros_like(logits)
        dlogits[np.arange(x.shape[0]), t] = F32(1.0)
        return self.backward(dlogits, caches, need_param_grads=False).input_grad
