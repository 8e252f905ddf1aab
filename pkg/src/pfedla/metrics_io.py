"""Accuracy, communication accounting, round logs and CSV exports."""

from __future__ import annotations

import csv
import io
import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from pfedla.data import SamplePool
from pfedla.nn_engine import LayeredParams, LayerSpec, predict_proba

BYTES_PER_PARAM = 8
MBYTE = 2 ** 20


class MissingSnapshotError(LookupError):
    def __init__(self, message: str, round_index: int | None = None):
        self.round_index = round_index
        super().__init__(message)


@dataclass(frozen=True)
class Transmission:
    round: int
    client: int
    direction: str  # "down" (server -> client) or "up"
    layer: str
    nbytes: int


def layer_bytes(params: LayeredParams) -> dict[str, int]:
    return {name: size * BYTES_PER_PARAM for name, size in params.layer_sizes().items()}


@dataclass
class RoundLog:
    round: int
    participants: list[int] = field(default_factory=list)
    accuracies: list[float] | None = None
    mean_accuracy: float | None = None
    weights: dict[int, list[list[float]]] | None = None
    layer_names: list[str] | None = None
    retained: dict[int, list[str]] | None = None
    bytes_down: int = 0
    bytes_up: int = 0
    transmissions: list[Transmission] = field(default_factory=list, repr=False)

    def weight_matrix(self, client: int) -> np.ndarray:
        if self.weights is None or client not in self.weights:
            raise MissingSnapshotError(f"no weight snapshot for client {client} at round {self.round}",
                                       self.round)
        return np.asarray(self.weights[client])

    def to_dict(self) -> dict:
        d = {
            "round": self.round,
            "participants": list(self.participants),
            "accuracies": self.accuracies,
            "mean_accuracy": self.mean_accuracy,
            "bytes_down": self.bytes_down,
            "bytes_up": self.bytes_up,
        }
        if self.weights is not None:
            d["layer_names"] = self.layer_names
            d["weights"] = {str(k): v for k, v in sorted(self.weights.items())}
        if self.retained is not None:
            d["retained"] = {str(k): v for k, v in sorted(self.retained.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RoundLog":
        weights = d.get("weights")
        retained = d.get("retained")
        return cls(
            round=d["round"],
            participants=list(d.get("participants", [])),
            accuracies=d.get("accuracies"),
            mean_accuracy=d.get("mean_accuracy"),
            weights={int(k): v for k, v in weights.items()} if weights is not None else None,
            layer_names=d.get("layer_names"),
            retained={int(k): v for k, v in retained.items()} if retained is not None else None,
            bytes_down=d.get("bytes_down", 0),
            bytes_up=d.get("bytes_up", 0),
        )


def write_jsonl(logs: Iterable[RoundLog], path: str | os.PathLike, append: bool = False) -> None:
    with open(path, "a" if append else "w") as fh:
        for log in logs:
            fh.write(log.to_json() + "\n")


def read_jsonl(path: str | os.PathLike) -> list[RoundLog]:
    with open(path) as fh:
        return [RoundLog.from_dict(json.loads(line)) for line in fh if line.strip()]


def evaluate_accuracy(model: LayeredParams, specs: Sequence[LayerSpec], split: SamplePool) -> float:
    """Fraction of samples whose argmax class (lowest index on ties) is correct."""
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    probs = predict_proba(model, specs, split.inputs)
    # np.argmax returns the first maximal index
    pred = np.argmax(probs, axis=1)
    return float(np.mean(pred == split.labels))


def comm_cost(records: Iterable[Transmission]) -> dict[int, dict[str, int]]:
    """Exact byte totals per round and direction."""
    out: dict[int, dict[str, int]] = defaultdict(lambda: {"down": 0, "up": 0})
    for r in records:
        out[r.round][r.direction] += r.nbytes
    return dict(sorted(out.items()))


def total_cost(logs: Iterable[RoundLog]) -> dict[str, float]:
    logs = list(logs)
    down = sum(l.bytes_down for l in logs)
    up = sum(l.bytes_up for l in logs)
    return {"bytes_down": down, "bytes_up": up,
            "mbytes_down": down / MBYTE, "mbytes_up": up / MBYTE,
            "mbytes_total": (down + up) / MBYTE}


def export_weight_trace(logs: Sequence[RoundLog], client: int, peers: Sequence[int],
                        path: str | os.PathLike | None = None) -> str:
    """CSV rows ``round,layer,peer,weight`` for every snapshot of ``client``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["round", "layer", "peer", "weight"])
    found = False
    for log in logs:
        if log.weights is None or client not in log.weights:
            continue
        found = True
        w = np.asarray(log.weights[client])
        for l, name in enumerate(log.layer_names):
            for p in peers:
                writer.writerow([log.round, name, p, repr(float(w[l, p]))])
    if not found:
        raise MissingSnapshotError(f"no weight snapshots for client {client} in the logs")
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def heatmap_matrix(logs: Sequence[RoundLog], layer: str, round_index: int) -> np.ndarray:
    """``H[i, j]`` = weight client ``i`` puts on client ``j`` for ``layer``."""
    log = next((l for l in logs if l.round == round_index), None)
    if log is None or log.weights is None:
        raise MissingSnapshotError(f"no weight snapshot at round {round_index}", round_index)
    if layer not in log.layer_names:
        raise MissingSnapshotError(f"layer {layer!r} not in snapshot at round {round_index}",
                                   round_index)
    l = log.layer_names.index(layer)
    clients = sorted(log.weights)
    return np.array([np.asarray(log.weights[i])[l] for i in clients])


def export_heatmap(logs: Sequence[RoundLog], layer: str, round_index: int,
                   path: str | os.PathLike | None = None) -> str:
    H = heatmap_matrix(logs, layer, round_index)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["client", *[f"peer_{j}" for j in range(H.shape[1])]])
    for i, row in enumerate(H):
        writer.writerow([i, *[repr(float(v)) for v in row]])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
