"""Per-client hypernetworks producing layer-wise aggregation weights.

A hypernetwork is a relu MLP trunk on a learned embedding followed by one
linear head per target-model layer; each head emits one logit per client and
the logits are softmax-normalized into that layer's weight row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pfedla.aggregation import ParamBank, WeightMatrix, normalize_weights
from pfedla.nn_engine import (
    DimensionError,
    Layer,
    LayeredParams,
    LayerSpec,
    dense_backward,
    dense_forward,
    init_params,
)

CHECKPOINT_VERSION = 1


@dataclass
class HyperUpdateConfig:
    eta_v: float = 0.01
    eta_psi: float = 0.01

    def __post_init__(self):
        if self.eta_v <= 0 or self.eta_psi <= 0:
            raise ValueError("hypernetwork step sizes must be positive")


@dataclass
class HyperNet:
    client_id: int
    embedding: np.ndarray
    trunk: LayeredParams
    heads: LayeredParams
    layer_names: list[str]
    num_clients: int

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[0]

    @property
    def trunk_specs(self) -> list[LayerSpec]:
        return [LayerSpec(l.name, *l.weight.shape, "relu") for l in self.trunk]

    @property
    def head_input_dim(self) -> int:
        return self.trunk[-1].weight.shape[1] if len(self.trunk) else self.embed_dim

    @property
    def num_params(self) -> int:
        return self.trunk.num_params + self.heads.num_params

    def copy(self) -> "HyperNet":
        return HyperNet(self.client_id, self.embedding.copy(), self.trunk.copy(),
                        self.heads.copy(), list(self.layer_names), self.num_clients)

    def equal(self, other: "HyperNet") -> bool:
        return (self.client_id == other.client_id
                and self.layer_names == other.layer_names
                and self.num_clients == other.num_clients
                and np.array_equal(self.embedding, other.embedding)
                and self.trunk.equal(other.trunk) and self.heads.equal(other.heads))

    def to_dict(self) -> dict:
        def pack(p: LayeredParams):
            return [{"name": l.name, "shape": list(l.weight.shape),
                     "weight": l.weight.ravel().tolist(), "bias": l.bias.tolist()} for l in p]
        return {
            "format": "pfedla-hypernet",
            "version": CHECKPOINT_VERSION,
            "client_id": self.client_id,
            "num_clients": self.num_clients,
            "layer_names": self.layer_names,
            "embedding": self.embedding.tolist(),
            "trunk": pack(self.trunk),
            "heads": pack(self.heads),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HyperNet":
        if d.get("format") != "pfedla-hypernet":
            raise ValueError("not a hypernetwork checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported hypernetwork checkpoint version {d.get('version')}")

        def unpack(items):
            return LayeredParams([
                Layer(i["name"], np.asarray(i["weight"], dtype=np.float64).reshape(i["shape"]),
                      np.asarray(i["bias"], dtype=np.float64))
                for i in items])
        return cls(d["client_id"], np.asarray(d["embedding"], dtype=np.float64),
                   unpack(d["trunk"]), unpack(d["heads"]), list(d["layer_names"]),
                   d["num_clients"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "HyperNet":
        return cls.from_dict(json.loads(text))


def hn_init(client_id: int, embed_dim: int, layer_names: Sequence[str] | int,
            num_clients: int, hidden_widths: Sequence[int] = (64,),
            seed: int | np.random.Generator = 0) -> HyperNet:
    """Fresh hypernetwork with zeroed heads, so the first weights are uniform.

    ``layer_names`` may be an int, in which case layers are named
    ``layer0 ... layer{n-1}``.
    """
    if isinstance(layer_names, int):
        layer_names = [f"layer{l}" for l in range(layer_names)]
    if embed_dim < 1 or num_clients < 1 or not layer_names:
        raise ValueError("embedding dim, client count and layer count must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    embedding = rng.standard_normal(embed_dim)
    dims = [embed_dim, *hidden_widths]
    specs = [LayerSpec(f"hidden{i + 1}", a, b, "relu") for i, (a, b) in enumerate(zip(dims, dims[1:]))]
    trunk = init_params(specs, rng) if specs else LayeredParams([])
    width = dims[-1]
    heads = LayeredParams([Layer(f"head_{name}", np.zeros((width, num_clients)),
                                 np.zeros(num_clients)) for name in layer_names])
    return HyperNet(client_id, embedding, trunk, heads, list(layer_names), num_clients)


def _features(hn: HyperNet):
    x = hn.embedding[None, :]
    if len(hn.trunk) == 0:
        return None, x
    cache = dense_forward(hn.trunk, hn.trunk_specs, x)
    return cache, cache.output


def hn_logits(hn: HyperNet) -> np.ndarray:
    _, h = _features(hn)
    return np.stack([(h @ head.weight + head.bias)[0] for head in hn.heads])


def hn_forward(hn: HyperNet) -> WeightMatrix:
    return normalize_weights(hn_logits(hn), hn.layer_names, hn.client_id)


def layer_inner_products(bank: ParamBank, delta: LayeredParams,
                         layer_names: Sequence[str]) -> np.ndarray:
    """``s[l, j] = <bank_j layer l, delta layer l>`` over weights and biases."""
    if delta.names != list(layer_names):
        raise DimensionError(f"delta layers {delta.names} vs hypernetwork layers {list(layer_names)}")
    s = np.zeros((len(layer_names), len(bank)))
    for j, entry in enumerate(bank):
        if entry.names != delta.names:
            raise DimensionError(f"bank entry {j} layers {entry.names} vs delta {delta.names}")
        for l, (a, d) in enumerate(zip(entry, delta)):
            if a.weight.shape != d.weight.shape or a.bias.shape != d.bias.shape:
                raise DimensionError(f"layer {a.name!r}: bank entry {j} shape {a.weight.shape} "
                                     f"vs delta {d.weight.shape}", layer=a.name,
                                     expected=a.weight.shape, got=d.weight.shape)
            s[l, j] = np.vdot(a.weight, d.weight) + np.vdot(a.bias, d.bias)
    return s


def surrogate_value(hn: HyperNet, bank: ParamBank, delta: LayeredParams) -> float:
    """``sum_l sum_j alpha[l, j] * <bank_j^l, delta^l>``; its gradient is the update direction."""
    s = layer_inner_products(bank, delta, hn.layer_names)
    return float(np.sum(hn_forward(hn).values * s))


def surrogate_grads(hn: HyperNet, bank: ParamBank, delta: LayeredParams
                    ) -> tuple[np.ndarray, LayeredParams, LayeredParams]:
    """Gradients of the surrogate w.r.t. (embedding, trunk, heads)."""
    if len(bank) != hn.num_clients:
        raise DimensionError(f"bank has {len(bank)} clients, hypernetwork expects {hn.num_clients}")
    s = layer_inner_products(bank, delta, hn.layer_names)
    cache, h = _features(hn)
    logits = np.stack([(h @ head.weight + head.bias)[0] for head in hn.heads])
    alpha = normalize_weights(logits).values
    # softmax Jacobian applied row-wise
    dz = alpha * (s - np.sum(alpha * s, axis=1, keepdims=True))
    head_grads = []
    dh = np.zeros_like(h)
    for head, g in zip(hn.heads, dz):
        head_grads.append(Layer(head.name, h.T @ g[None, :], g.copy()))
        dh += g[None, :] @ head.weight.T
    if cache is None:
        return dh[0], LayeredParams([]), LayeredParams(head_grads)
    trunk_grads, dv = dense_backward(cache, hn.trunk_specs, dh)
    return dv[0], trunk_grads, LayeredParams(head_grads)


def hn_update(hn: HyperNet, bank: ParamBank, delta: LayeredParams,
              cfg: HyperUpdateConfig | None = None) -> HyperNet:
    """Move embedding and hypernetwork parameters along the surrogate gradient.

    The step is additive: ``delta`` is a descent step on the client loss, so
    the surrogate gradient is itself a descent direction for the embedding and
    hypernetwork parameters.
    """
    cfg = cfg or HyperUpdateConfig()
    dv, dtrunk, dheads = surrogate_grads(hn, bank, delta)
    return HyperNet(hn.client_id, hn.embedding + cfg.eta_v * dv,
                    hn.trunk + dtrunk.scale(cfg.eta_psi), hn.heads + dheads.scale(cfg.eta_psi),
                    list(hn.layer_names), hn.num_clients)
