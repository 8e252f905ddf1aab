"""Layer-wise aggregation weights and personalized model assembly."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pfedla.nn_engine import DimensionError, Layer, LayeredParams

ParamBank = Sequence[LayeredParams]


@dataclass
class WeightMatrix:
    """Aggregation weights of one client: ``values[l, j]`` is the weight that
    client ``client_id`` puts on peer ``j`` for layer ``layer_names[l]``."""

    client_id: int
    layer_names: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape[0] != len(self.layer_names):
            raise DimensionError(f"{len(self.layer_names)} layers but weight rows "
                                 f"{self.values.shape[0]}")

    @property
    def num_clients(self) -> int:
        return self.values.shape[1]

    def layer(self, name: str) -> np.ndarray:
        return self.values[self.layer_names.index(name)]

    def self_weights(self) -> np.ndarray:
        return self.values[:, self.client_id]

    def check(self, tol: float = 1e-9) -> None:
        if np.any(self.values < 0):
            raise ValueError("negative aggregation weight")
        sums = self.values.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > tol):
            raise ValueError(f"layer weights do not sum to 1: {sums}")

    def to_csv(self) -> str:
        """Rows are layers, columns are clients."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", *[f"client_{j}" for j in range(self.num_clients)]])
        for name, row in zip(self.layer_names, self.values):
            writer.writerow([name, *[repr(float(v)) for v in row]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, client_id: int) -> "WeightMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        names = [r[0] for r in rows[1:]]
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(client_id, names, values)


def normalize_weights(logits: np.ndarray, layer_names: Sequence[str] | None = None,
                      client_id: int = 0) -> WeightMatrix:
    """Softmax over clients, independently for every layer row of ``logits``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    values = e / e.sum(axis=1, keepdims=True)
    if layer_names is None:
        layer_names = [f"layer{l}" for l in range(values.shape[0])]
    return WeightMatrix(client_id, list(layer_names), values)


def aggregate_personalized(bank: ParamBank, alpha: WeightMatrix) -> LayeredParams:
    """For each layer, the alpha-weighted sum of that layer over all bank entries."""
    if len(bank) != alpha.num_clients:
        raise DimensionError(f"bank has {len(bank)} clients, weights cover {alpha.num_clients}")
    names = bank[0].names
    if names != list(alpha.layer_names):
        raise DimensionError(f"bank layers {names} vs weight layers {alpha.layer_names}")
    for entry in bank[1:]:
        if entry.names != names:
            raise DimensionError(f"inconsistent bank layers: {entry.names} vs {names}")
    out = []
    for l, name in enumerate(names):
        w = alpha.values[l]
        weight = np.zeros_like(bank[0][l].weight)
        bias = np.zeros_like(bank[0][l].bias)
        for j, entry in enumerate(bank):
            weight += w[j] * entry[l].weight
            bias += w[j] * entry[l].bias
        out.append(Layer(name, weight, bias))
    return LayeredParams(out)


def select_retained_layers(alpha: WeightMatrix, k: int) -> list[str]:
    """Names of the ``k`` layers with the largest self-weight, descending.

    Ties go to the lower layer index.
    """
    n = len(alpha.layer_names)
    if k < 0 or k > n:
        raise ValueError(f"k={k} outside [0, {n}]")
    selfw = alpha.self_weights()
    # lexsort: last key is primary
    order = np.lexsort((np.arange(n), -selfw))
    return [alpha.layer_names[i] for i in order[:k]]
