"""Network container, cross-entropy loss with weight decay, backprop and SGD."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .layers import KINDS, Conv2D, FullyConnected, Layer

PROB_FLOOR = 1e-12

SQUARED_FROBENIUS = "squared_frobenius"
FROBENIUS = "frobenius"


class ShapeError(ValueError):
    pass


class Network:
    """Ordered layers ending in softmax over ``classes`` outputs."""

    def __init__(self, layers: Sequence[Layer], input_shape, classes: int):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.classes = int(classes)
        self._validate()

    def _validate(self):
        kinds = [layer.kind for layer in self.layers]
        if not kinds or kinds[-1] != "softmax":
            raise ShapeError("the last layer must be softmax")
        if "softmax" in kinds[:-1]:
            raise ShapeError("softmax may only appear as the final layer")
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ValueError as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
        if shape != (self.classes,):
            raise ShapeError(f"network output {shape} does not match {self.classes} classes")

    @property
    def weighted(self) -> List[int]:
        """Indices of layers carrying a weight tensor."""
        return [i for i, layer in enumerate(self.layers) if layer.has_weights]

    def weights(self):
        return [self.layers[i].weight for i in self.weighted]

    def parameters(self):
        """Flat list of parameter arrays: weight then bias for each weighted layer."""
        out = []
        for i in self.weighted:
            out.append(self.layers[i].weight)
            out.append(self.layers[i].bias)
        return out

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def copy(self):
        new = Network.__new__(Network)
        new.layers = []
        for layer in self.layers:
            clone = object.__new__(type(layer))
            clone.__dict__.update(layer.__dict__)
            clone.weight = layer.weight.copy()
            clone.bias = layer.bias.copy()
            new.layers.append(clone)
        new.input_shape, new.classes = self.input_shape, self.classes
        return new

    def architecture(self):
        return {
            "input_shape": list(self.input_shape),
            "classes": self.classes,
            "layers": [layer.config() for layer in self.layers],
        }


def build_network(arch: dict, seed: int = 0) -> Network:
    """Instantiate an architecture document (see configs/mlp_784_128_10.json).

    Weights get Glorot-uniform values from ``seed``; biases start at zero.
    """
    rng = np.random.default_rng(seed)
    try:
        input_shape = tuple(arch["input_shape"])
        classes = int(arch["classes"])
        specs = arch["layers"]
    except KeyError as e:
        raise ShapeError(f"architecture is missing {e}") from None
    layers = []
    shape = input_shape
    for i, spec in enumerate(specs):
        kind = spec.get("kind")
        if kind not in KINDS:
            raise ShapeError(f"layer {i}: unknown kind {kind!r}")
        use_bias = spec.get("bias", True)
        if kind == "fully_connected":
            if len(shape) != 1:
                raise ShapeError(f"layer {i} (fully_connected): input {shape} is not flat")
            layer = FullyConnected(shape[0], int(spec["units"]), use_bias, rng)
        elif kind == "conv2d":
            if len(shape) != 3:
                raise ShapeError(f"layer {i} (conv2d): input {shape} is not (C, H, W)")
            layer = Conv2D(
                shape[0],
                int(spec["filters"]),
                int(spec["kernel"]),
                int(spec.get("stride", 1)),
                int(spec.get("padding", 0)),
                use_bias,
                rng,
            )
        elif kind == "max_pool":
            layer = KINDS[kind](int(spec.get("size", 2)), spec.get("stride"))
        else:
            layer = KINDS[kind]()
        try:
            shape = layer.output_shape(shape)
        except ValueError as e:
            raise ShapeError(f"layer {i} ({kind}): {e}") from None
        layers.append(layer)
    return Network(layers, input_shape, classes)


def load_architecture(path) -> dict:
    with open(path) as f:
        return json.load(f)


@dataclass
class LossSpec:
    weight_decay: float = 0.0
    decay_form: str = SQUARED_FROBENIUS

    def __post_init__(self):
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.decay_form not in (SQUARED_FROBENIUS, FROBENIUS):
            raise ValueError(f"unknown decay_form {self.decay_form!r}")


def forward(model: Network, x) -> List[np.ndarray]:
    """Activations X^(0) .. X^(L) for a batch (or a single sample)."""
    x = np.asarray(x, dtype=float)
    if x.shape == model.input_shape:
        x = x[None]
    if x.shape[1:] != model.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} does not match {model.input_shape}")
    acts = [x]
    for i, layer in enumerate(model.layers):
        try:
            acts.append(layer.forward(acts[-1]))
        except ValueError as e:
            raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
    return acts


def _labels(y, n):
    y = np.atleast_1d(np.asarray(y, dtype=int))
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    return y


def decay_term(model: Network, spec: LossSpec) -> float:
    if spec.weight_decay == 0:
        return 0.0
    sq = sum(float(np.sum(w * w)) for w in model.weights())
    if spec.decay_form == SQUARED_FROBENIUS:
        return spec.weight_decay * sq
    return spec.weight_decay * float(np.sqrt(sq))


def cross_entropy(probs, y):
    n = probs.shape[0]
    y = _labels(y, n)
    if np.any((y < 0) | (y >= probs.shape[1])):
        raise ValueError(f"labels must lie in [0, {probs.shape[1]})")
    p = probs[np.arange(n), y]
    if np.any(p < PROB_FLOOR):
        warnings.warn("predicted probability underflow; clamped at 1e-12", RuntimeWarning, stacklevel=3)
        p = np.maximum(p, PROB_FLOOR)
    return float(-np.mean(np.log(p)))


def loss(model: Network, x, y, spec: LossSpec = LossSpec(), acts=None) -> float:
    """Mean negative log-likelihood of the true class plus the decay term.

    Labels are 0-based class indices.
    """
    if acts is None:
        acts = forward(model, x)
    return cross_entropy(acts[-1], y) + decay_term(model, spec)


def backward(model: Network, acts, y, spec: LossSpec = LossSpec()):
    """Gradients of ``loss`` for every parameter, ordered as ``model.parameters()``.

    The softmax/cross-entropy pair is differentiated jointly, giving
    (p - onehot) / N at the logits.
    """
    probs = acts[-1]
    n = probs.shape[0]
    y = _labels(y, n)
    grad = probs.copy()
    grad[np.arange(n), y] -= 1.0
    grad /= n
    layer_grads = {}
    for i in range(len(model.layers) - 2, -1, -1):
        layer = model.layers[i]
        grad, gw, gb = layer.backward(acts[i], acts[i + 1], grad)
        if layer.has_weights:
            layer_grads[i] = (gw, gb)

    lam = spec.weight_decay
    norm = None
    if lam and spec.decay_form == FROBENIUS:
        norm = float(np.sqrt(sum(float(np.sum(w * w)) for w in model.weights())))
    out = []
    for i in model.weighted:
        gw, gb = layer_grads[i]
        w = model.layers[i].weight
        if lam:
            if spec.decay_form == SQUARED_FROBENIUS:
                gw = gw + 2.0 * lam * w
            elif norm > 0:
                gw = gw + lam * w / norm
            # subgradient at W = 0 taken as 0
        out.append(gw)
        out.append(gb)
    for g in out:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    return out


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.0
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    @classmethod
    def for_model(cls, model: Network, learning_rate, momentum=0.0):
        return cls(learning_rate, momentum, [np.zeros_like(p) for p in model.parameters()])


def sgd_step(model: Network, grads, opt: OptimizerState):
    """velocity <- momentum * velocity - lr * grad; param <- param + velocity (in place)."""
    params = model.parameters()
    if not opt.velocity:
        opt.velocity = [np.zeros_like(p) for p in params]
    if len(grads) != len(params):
        raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
    for p, g, v in zip(params, grads, opt.velocity):
        if g.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"gradient {g.shape} / velocity {v.shape} vs parameter {p.shape}")
        v *= opt.momentum
        v -= opt.learning_rate * g
        p += v


def predict(model: Network, x, batch_size=1000):
    x = np.asarray(x, dtype=float)
    return np.concatenate(
        [forward(model, x[i:i + batch_size])[-1] for i in range(0, len(x), batch_size)]
    )


def evaluate(model: Network, x, y, spec: LossSpec = LossSpec(), batch_size=1000):
    """(accuracy, mean loss). Argmax ties resolve to the lowest class index."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(x) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    probs = predict(model, x, batch_size)
    acc = float(np.mean(np.argmax(probs, axis=1) == y))
    return acc, cross_entropy(probs, y) + decay_term(model, spec)
