"""Dense network engine: forward pass, exact backprop, SGD and cross-entropy.

Weights are stored as ``(input_dim, output_dim)`` so a layer computes
``x @ W + b`` on row-major batches. Everything is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

ACTIVATIONS = ("relu", "identity", "softmax_output")
PROB_EPS = 1e-12


class DimensionError(ValueError):
    """Raised when array shapes disagree with the layer specs."""

    def __init__(self, message: str, *, layer: str | None = None,
                 expected: tuple | None = None, got: tuple | None = None):
        self.layer = layer
        self.expected = expected
        self.got = got
        super().__init__(message)


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    name: str
    input_dim: int
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError(f"layer {self.name!r}: dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"layer {self.name!r}: unknown activation {self.activation!r}")

    @property
    def num_params(self) -> int:
        return self.input_dim * self.output_dim + self.output_dim


def validate_specs(specs: Sequence[LayerSpec], classifier: bool = True) -> None:
    """Check name uniqueness, chaining of dims and the softmax placement.

    With ``classifier=True`` exactly one layer must use ``softmax_output`` and
    it must be the last one; otherwise no layer may use it.
    """
    if not specs:
        raise ValueError("empty layer spec list")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate layer names in {names}")
    for prev, nxt in zip(specs, specs[1:]):
        if prev.output_dim != nxt.input_dim:
            raise DimensionError(
                f"layer {nxt.name!r} expects input {nxt.input_dim}, "
                f"previous layer {prev.name!r} emits {prev.output_dim}",
                layer=nxt.name, expected=(prev.output_dim,), got=(nxt.input_dim,))
    n_soft = sum(s.activation == "softmax_output" for s in specs)
    if classifier:
        if n_soft != 1 or specs[-1].activation != "softmax_output":
            raise ValueError("exactly one softmax_output layer is required and it must be last")
    elif n_soft:
        raise ValueError("softmax_output is only valid for classifier specs")


def mlp_specs(input_dim: int, hidden: Sequence[int], num_classes: int,
              prefix: str = "fc") -> list[LayerSpec]:
    """Specs for a relu MLP ending in a softmax classifier layer."""
    dims = [input_dim, *hidden, num_classes]
    specs = []
    for idx, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        act = "softmax_output" if idx == len(dims) - 2 else "relu"
        specs.append(LayerSpec(f"{prefix}{idx + 1}", d_in, d_out, act))
    return specs


@dataclass
class Layer:
    name: str
    weight: np.ndarray
    bias: np.ndarray

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size


class LayeredParams:
    """Ordered named layers, each a (weight, bias) pair aggregated as one unit."""

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    @classmethod
    def from_arrays(cls, items) -> "LayeredParams":
        return cls([Layer(name, np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                    for name, w, b in items])

    def __iter__(self) -> Iterator[Layer]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, key: int | str) -> Layer:
        if isinstance(key, str):
            for layer in self.layers:
                if layer.name == key:
                    return layer
            raise KeyError(key)
        return self.layers[key]

    def __repr__(self) -> str:
        shapes = ", ".join(f"{l.name}:{l.weight.shape}" for l in self.layers)
        return f"LayeredParams({shapes})"

    @property
    def names(self) -> list[str]:
        return [l.name for l in self.layers]

    @property
    def num_params(self) -> int:
        return sum(l.size for l in self.layers)

    def layer_sizes(self) -> dict[str, int]:
        return {l.name: l.size for l in self.layers}

    def copy(self) -> "LayeredParams":
        return LayeredParams([Layer(l.name, l.weight.copy(), l.bias.copy()) for l in self.layers])

    def zeros_like(self) -> "LayeredParams":
        return LayeredParams([Layer(l.name, np.zeros_like(l.weight), np.zeros_like(l.bias))
                              for l in self.layers])

    def _zip(self, other: "LayeredParams"):
        if self.names != other.names:
            raise DimensionError(f"layer names differ: {self.names} vs {other.names}")
        for a, b in zip(self.layers, other.layers):
            if a.weight.shape != b.weight.shape or a.bias.shape != b.bias.shape:
                raise DimensionError(f"layer {a.name!r} shape mismatch", layer=a.name,
                                     expected=a.weight.shape, got=b.weight.shape)
            yield a, b

    def __add__(self, other: "LayeredParams") -> "LayeredParams":
        return LayeredParams([Layer(a.name, a.weight + b.weight, a.bias + b.bias)
                              for a, b in self._zip(other)])

    def __sub__(self, other: "LayeredParams") -> "LayeredParams":
        return LayeredParams([Layer(a.name, a.weight - b.weight, a.bias - b.bias)
                              for a, b in self._zip(other)])

    def scale(self, c: float) -> "LayeredParams":
        return LayeredParams([Layer(l.name, c * l.weight, c * l.bias) for l in self.layers])

    def dot(self, other: "LayeredParams", layer: str | None = None) -> float:
        """Inner product over all layers, or over one named layer."""
        total = 0.0
        for a, b in self._zip(other):
            if layer is None or a.name == layer:
                total += float(np.vdot(a.weight, b.weight) + np.vdot(a.bias, b.bias))
        return total

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias.ravel()])
                               for l in self.layers])

    def allclose(self, other: "LayeredParams", atol: float = 0.0, rtol: float = 0.0) -> bool:
        return all(np.allclose(a.weight, b.weight, atol=atol, rtol=rtol)
                   and np.allclose(a.bias, b.bias, atol=atol, rtol=rtol)
                   for a, b in self._zip(other))

    def equal(self, other: "LayeredParams") -> bool:
        return self.names == other.names and all(
            np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers))


def check_params(params: LayeredParams, specs: Sequence[LayerSpec]) -> None:
    if params.names != [s.name for s in specs]:
        raise DimensionError(f"param layers {params.names} do not match specs "
                             f"{[s.name for s in specs]}")
    for layer, spec in zip(params, specs):
        expected = (spec.input_dim, spec.output_dim)
        if layer.weight.shape != expected:
            raise DimensionError(f"layer {spec.name!r}: weight shape {layer.weight.shape}, "
                                 f"expected {expected}", layer=spec.name,
                                 expected=expected, got=layer.weight.shape)
        if layer.bias.shape != (spec.output_dim,):
            raise DimensionError(f"layer {spec.name!r}: bias shape {layer.bias.shape}, "
                                 f"expected {(spec.output_dim,)}", layer=spec.name,
                                 expected=(spec.output_dim,), got=layer.bias.shape)


def init_params(specs: Sequence[LayerSpec], rng: np.random.Generator) -> LayeredParams:
    """Glorot-uniform weights, zero biases."""
    layers = []
    for s in specs:
        limit = np.sqrt(6.0 / (s.input_dim + s.output_dim))
        w = rng.uniform(-limit, limit, size=(s.input_dim, s.output_dim))
        layers.append(Layer(s.name, w, np.zeros(s.output_dim)))
    return LayeredParams(layers)


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise DimensionError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        if self.inputs.shape[0] < 1:
            raise ValueError("batch must hold at least one sample")
        if self.labels.shape != (self.inputs.shape[0],):
            raise DimensionError(f"{self.inputs.shape[0]} inputs but labels shape "
                                 f"{self.labels.shape}")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardCache:
    """Per-layer pre-activations and outputs kept for the backward pass."""

    params: LayeredParams
    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    outs: list[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.outs[-1]


def dense_forward(params: LayeredParams, specs: Sequence[LayerSpec],
                  x: np.ndarray) -> ForwardCache:
    check_params(params, specs)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != specs[0].input_dim:
        raise DimensionError(f"input shape {x.shape} incompatible with first layer "
                             f"input_dim {specs[0].input_dim}", layer=specs[0].name,
                             expected=(specs[0].input_dim,), got=x.shape)
    cache = ForwardCache(params=params, inputs=x)
    h = x
    for layer, spec in zip(params, specs):
        z = h @ layer.weight + layer.bias
        if spec.activation == "relu":
            h = np.maximum(z, 0.0)
        elif spec.activation == "identity":
            h = z
        else:
            h = softmax(z)
        cache.pre.append(z)
        cache.outs.append(h)
    return cache


def dense_backward(cache: ForwardCache, specs: Sequence[LayerSpec],
                   grad_top: np.ndarray, top_is_preactivation: bool = False
                   ) -> tuple[LayeredParams, np.ndarray]:
    """Backpropagate ``grad_top`` through the cached network.

    ``grad_top`` is the gradient w.r.t. the last layer's output, or w.r.t. its
    pre-activation when ``top_is_preactivation`` is set (the softmax/CE case).
    Returns parameter gradients and the gradient w.r.t. the network input.
    """
    params = cache.params
    grads = [None] * len(specs)
    g = grad_top
    for idx in range(len(specs) - 1, -1, -1):
        spec = specs[idx]
        if not (idx == len(specs) - 1 and top_is_preactivation):
            if spec.activation == "relu":
                g = g * (cache.pre[idx] > 0.0)
            elif spec.activation == "softmax_output":
                s = cache.outs[idx]
                g = s * (g - np.sum(g * s, axis=1, keepdims=True))
        h_in = cache.inputs if idx == 0 else cache.outs[idx - 1]
        grads[idx] = Layer(spec.name, h_in.T @ g, g.sum(axis=0))
        g = g @ params[idx].weight.T
    return LayeredParams(grads), g


def forward(params: LayeredParams, specs: Sequence[LayerSpec], batch: Batch) -> ForwardCache:
    """Run the classifier; ``cache.output`` holds the class probabilities."""
    return dense_forward(params, specs, batch.inputs)


def predict_proba(params: LayeredParams, specs: Sequence[LayerSpec], x: np.ndarray) -> np.ndarray:
    return dense_forward(params, specs, x).output


def cross_entropy(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true class, probabilities clamped at 1e-12."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes = probabilities.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    picked = probabilities[np.arange(labels.shape[0]), labels]
    return float(np.mean(-np.log(np.maximum(picked, PROB_EPS))))


def backward(params: LayeredParams, specs: Sequence[LayerSpec], batch: Batch,
             cache: ForwardCache) -> LayeredParams:
    """Gradient of mean cross-entropy w.r.t. every weight and bias."""
    if cache.params is not params or not np.array_equal(cache.inputs, batch.inputs):
        raise StaleCacheError("forward cache was computed for different params or inputs")
    probs = cache.output
    n_classes = probs.shape[1]
    if batch.labels.min() < 0 or batch.labels.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes})")
    dz = probs.copy()
    dz[np.arange(len(batch)), batch.labels] -= 1.0
    dz /= len(batch)
    grads, _ = dense_backward(cache, specs, dz, top_is_preactivation=True)
    return grads


def loss_and_grad(params: LayeredParams, specs: Sequence[LayerSpec],
                  batch: Batch) -> tuple[float, LayeredParams]:
    cache = forward(params, specs, batch)
    return cross_entropy(cache.output, batch.labels), backward(params, specs, batch, cache)


def sgd_step(params: LayeredParams, gradients: LayeredParams, eta: float) -> LayeredParams:
    return params - gradients.scale(eta)
