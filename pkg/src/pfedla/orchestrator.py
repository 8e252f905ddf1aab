"""Federated training loops for pFedLA and its top-k retention variant.

The server keeps a parameter bank holding each client's latest post-training
model and one hypernetwork per client. In a round every participant
downloads its personalized aggregate, trains locally and uploads the change;
the server then writes the bank (ascending client id) and updates the
participants' hypernetworks against the refreshed bank.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from pfedla.aggregation import (
    WeightMatrix,
    aggregate_personalized,
    normalize_weights,
    select_retained_layers,
)
from pfedla.data import ClientDataset
from pfedla.hypernet import HyperNet, HyperUpdateConfig, hn_forward, hn_init, hn_update
from pfedla.metrics_io import (
    BYTES_PER_PARAM,
    RoundLog,
    Transmission,
    comm_cost,
    evaluate_accuracy,
)
from pfedla.nn_engine import (
    Batch,
    Layer,
    LayeredParams,
    LayerSpec,
    backward,
    forward,
    init_params,
    mlp_specs,
    sgd_step,
)

ALGORITHMS = ("pfedla", "heurpfedla", "fedavg", "local", "modelwise")
STATE_VERSION = 1


class ClientError(RuntimeError):
    def __init__(self, client_id: int, cause: Exception):
        self.client_id = client_id
        self.cause = cause
        super().__init__(f"client {client_id}: {cause}")


class RoundError(RuntimeError):
    def __init__(self, round_index: int, cause: Exception):
        self.round_index = round_index
        self.cause = cause
        super().__init__(f"round {round_index}: {cause}")


@dataclass
class RunConfig:
    algorithm: str = "pfedla"
    rounds: int = 50
    local_epochs: int = 1
    batch_size: int = 32
    eta: float = 0.01
    participation_fraction: float = 1.0
    k: int = 0
    seed: int = 0
    hidden: tuple[int, ...] = (32,)
    hn_embed_dim: int = 16
    hn_hidden: tuple[int, ...] = (64,)
    eta_v: float = 0.01
    eta_psi: float = 0.01
    freeze_alpha: bool = False
    tau: float = 1.0
    eval_every: int = 1
    snapshot_every: int = 1
    skip_retained_upload: bool = False
    num_clients: int | None = None

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.hn_hidden = tuple(self.hn_hidden)
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not 0 < self.participation_fraction <= 1:
            raise ValueError("participation_fraction must be in (0, 1]")
        if self.rounds < 0 or self.local_epochs < 0 or self.batch_size < 1:
            raise ValueError("rounds/local_epochs must be >= 0 and batch_size >= 1")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def hn_config(self) -> HyperUpdateConfig:
        return HyperUpdateConfig(self.eta_v, self.eta_psi)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["hn_hidden"] = list(self.hn_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FederationState:
    specs: list[LayerSpec]
    bank: list[LayeredParams]
    client_models: list[LayeredParams]
    hypernets: list[HyperNet] | None
    rng: np.random.Generator
    round: int = 0
    shared: LayeredParams | None = None

    @property
    def num_clients(self) -> int:
        return len(self.bank)

    @property
    def layer_names(self) -> list[str]:
        return [s.name for s in self.specs]

    def copy(self) -> "FederationState":
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng.bit_generator.state
        return FederationState(
            list(self.specs), [b.copy() for b in self.bank], [m.copy() for m in self.client_models],
            [h.copy() for h in self.hypernets] if self.hypernets is not None else None,
            rng, self.round, self.shared.copy() if self.shared is not None else None)


def specs_for(datasets: Sequence[ClientDataset], cfg: RunConfig) -> list[LayerSpec]:
    first = datasets[0].train
    return mlp_specs(first.input_dim, cfg.hidden, first.num_classes)


def init_state(cfg: RunConfig, datasets: Sequence[ClientDataset]) -> FederationState:
    """All clients start from one shared seeded model; heads start at zero."""
    N = len(datasets)
    if cfg.num_clients is not None and cfg.num_clients != N:
        raise ValueError(f"config expects {cfg.num_clients} clients, got {N} datasets")
    specs = specs_for(datasets, cfg)
    init = init_params(specs, np.random.default_rng([cfg.seed, 0]))
    names = [s.name for s in specs]
    hypernets = [hn_init(i, cfg.hn_embed_dim, names, N, cfg.hn_hidden,
                         np.random.default_rng([cfg.seed, 1, i])) for i in range(N)]
    return FederationState(
        specs=specs, bank=[init.copy() for _ in range(N)],
        client_models=[init.copy() for _ in range(N)], hypernets=hypernets,
        rng=np.random.default_rng([cfg.seed, 2]), round=0,
        shared=init.copy() if cfg.algorithm == "fedavg" else None)


def client_rng(cfg: RunConfig, round_index: int, client_id: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 3, round_index, client_id])


def _specs_from_params(params: LayeredParams) -> list[LayerSpec]:
    last = len(params) - 1
    return [LayerSpec(l.name, *l.weight.shape, "softmax_output" if i == last else "relu")
            for i, l in enumerate(params)]


def client_update(personalized: LayeredParams, dataset: ClientDataset, cfg: RunConfig,
                  rng: np.random.Generator, specs: Sequence[LayerSpec] | None = None
                  ) -> LayeredParams:
    """Local mini-batch SGD from ``personalized``; returns trained minus received."""
    n = len(dataset.train)
    if n == 0:
        raise ValueError(f"client {dataset.client_id} has an empty training split")
    specs = specs or _specs_from_params(personalized)
    theta = personalized
    X, y = dataset.train.inputs, dataset.train.labels
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = Batch(X[idx], y[idx])
            cache = forward(theta, specs, batch)
            theta = sgd_step(theta, backward(theta, specs, batch, cache), cfg.eta)
    return theta - personalized


def sample_participants(N: int, fraction: float, rng: np.random.Generator) -> list[int]:
    """Uniform draw without replacement of ``round(N * fraction)`` ids, sorted."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    m = max(1, int(round(N * fraction)))
    if m >= N:
        return list(range(N))
    return sorted(int(i) for i in rng.choice(N, size=m, replace=False))


def pfedla_alpha(state: FederationState, i: int, cfg: RunConfig) -> WeightMatrix:
    if cfg.freeze_alpha:
        N = state.num_clients
        return normalize_weights(np.zeros((len(state.specs), N)), state.layer_names, i)
    return hn_forward(state.hypernets[i])


def assemble(aggregate: LayeredParams, own: LayeredParams, retained: Sequence[str]) -> LayeredParams:
    """Aggregated layers everywhere except ``retained``, which come from ``own``."""
    keep = set(retained)
    return LayeredParams([own[l.name] if l.name in keep else l for l in aggregate])


def personalized_model(state: FederationState, i: int, cfg: RunConfig,
                       alpha_fn: Callable | None = None) -> LayeredParams:
    """The model client ``i`` would hold at the start of the next round."""
    if cfg.algorithm == "fedavg":
        return state.shared
    if cfg.algorithm == "local":
        return state.client_models[i]
    alpha_fn = alpha_fn or pfedla_alpha
    alpha = alpha_fn(state, i, cfg)
    agg = aggregate_personalized(state.bank, alpha)
    k = cfg.k if cfg.algorithm == "heurpfedla" else 0
    if k:
        return assemble(agg, state.client_models[i], select_retained_layers(alpha, k))
    return agg


def _evaluate(state, datasets, cfg, log: RoundLog, alpha_fn=None) -> None:
    if cfg.eval_every and log.round % cfg.eval_every == 0:
        accs = [evaluate_accuracy(personalized_model(state, i, cfg, alpha_fn), state.specs, d.test)
                for i, d in enumerate(datasets)]
        log.accuracies = accs
        log.mean_accuracy = float(np.mean(accs))


def _snapshot(state, cfg, log: RoundLog, alpha_fn) -> None:
    if alpha_fn is None or not cfg.snapshot_every or log.round % cfg.snapshot_every:
        return
    log.layer_names = list(state.layer_names)
    log.weights = {i: alpha_fn(state, i, cfg).values.tolist() for i in range(state.num_clients)}


def _finish_log(log: RoundLog) -> RoundLog:
    cost = comm_cost(log.transmissions).get(log.round, {"down": 0, "up": 0})
    log.bytes_down, log.bytes_up = cost["down"], cost["up"]
    return log


def personalized_round(state: FederationState, datasets: Sequence[ClientDataset],
                       cfg: RunConfig, alpha_fn: Callable, k: int = 0,
                       update_hypernets: bool = True) -> tuple[FederationState, RoundLog]:
    """One round of weighted per-layer aggregation, local training and bank update.

    ``alpha_fn(state, i, cfg)`` supplies client ``i``'s weights; ``k`` layers
    with the largest self-weight stay on the client and are not sent down.
    """
    state = state.copy()
    t = state.round + 1
    N = state.num_clients
    participants = sample_participants(N, cfg.participation_fraction, state.rng)
    log = RoundLog(round=t, participants=participants)
    retained_log = {}
    results = {}
    for i in participants:
        alpha = alpha_fn(state, i, cfg)
        agg = aggregate_personalized(state.bank, alpha)
        retained = select_retained_layers(alpha, k) if k else []
        start = assemble(agg, state.client_models[i], retained) if retained else agg
        try:
            delta = client_update(start, datasets[i], cfg, client_rng(cfg, t, i), state.specs)
        except Exception as exc:
            raise ClientError(i, exc) from exc
        results[i] = (start, delta, retained)
        retained_log[i] = retained
        for layer in start:
            if layer.name not in retained:
                log.transmissions.append(
                    Transmission(t, i, "down", layer.name, layer.size * BYTES_PER_PARAM))
            if not (cfg.skip_retained_upload and layer.name in retained):
                log.transmissions.append(
                    Transmission(t, i, "up", layer.name, layer.size * BYTES_PER_PARAM))

    uploaded = {}
    for i in participants:
        start, delta, retained = results[i]
        post = start + delta
        state.client_models[i] = post
        if cfg.skip_retained_upload and retained:
            keep = set(retained)
            state.bank[i] = LayeredParams([state.bank[i][l.name] if l.name in keep else l
                                           for l in post])
            delta = LayeredParams([Layer(d.name, np.zeros_like(d.weight), np.zeros_like(d.bias))
                                   if d.name in keep else d for d in delta])
        else:
            state.bank[i] = post
        uploaded[i] = delta

    if update_hypernets and not cfg.freeze_alpha:
        for i in participants:
            state.hypernets[i] = hn_update(state.hypernets[i], state.bank, uploaded[i],
                                           cfg.hn_config)
    state.round = t
    if k:
        log.retained = retained_log
    _evaluate(state, datasets, cfg, log, alpha_fn)
    _snapshot(state, cfg, log, alpha_fn)
    return state, _finish_log(log)


def run_round_pfedla(state: FederationState, datasets: Sequence[ClientDataset],
                     cfg: RunConfig) -> tuple[FederationState, RoundLog]:
    return personalized_round(state, datasets, cfg, pfedla_alpha, k=0)


def run_round_heur(state: FederationState, datasets: Sequence[ClientDataset],
                   cfg: RunConfig) -> tuple[FederationState, RoundLog]:
    n = len(state.specs)
    if cfg.k and not 1 <= cfg.k < n:
        raise ValueError(f"k={cfg.k} must satisfy 1 <= k < {n}")
    return personalized_round(state, datasets, cfg, pfedla_alpha, k=cfg.k)


def round_fn(cfg: RunConfig):
    from pfedla import baselines

    return {
        "pfedla": run_round_pfedla,
        "heurpfedla": run_round_heur,
        "fedavg": baselines.run_round_fedavg,
        "local": baselines.run_round_local,
        "modelwise": baselines.run_round_modelwise,
    }[cfg.algorithm]


def alpha_fn_for(cfg: RunConfig):
    from pfedla import baselines

    if cfg.algorithm in ("pfedla", "heurpfedla"):
        return pfedla_alpha
    if cfg.algorithm == "modelwise":
        return baselines.modelwise_alpha
    return None


@dataclass
class ExperimentResult:
    logs: list[RoundLog]
    models: list[LayeredParams]
    state: FederationState
    specs: list[LayerSpec] = field(default_factory=list)


def initial_log(state: FederationState, datasets, cfg: RunConfig) -> RoundLog:
    log = RoundLog(round=state.round)
    alpha_fn = alpha_fn_for(cfg)
    _evaluate(state, datasets, cfg, log, alpha_fn)
    _snapshot(state, cfg, log, alpha_fn)
    return log


def run_experiment(cfg: RunConfig, datasets: Sequence[ClientDataset],
                   state: FederationState | None = None,
                   on_round: Callable[[RoundLog, FederationState], None] | None = None
                   ) -> ExperimentResult:
    """Run ``cfg.rounds`` rounds; a fresh run also logs the untrained round 0.

    Passing ``state`` resumes from a checkpoint without re-logging round 0.
    """
    logs = []
    if state is None:
        state = init_state(cfg, datasets)
        logs.append(initial_log(state, datasets, cfg))
        if on_round:
            on_round(logs[-1], state)
    step = round_fn(cfg)
    for _ in range(cfg.rounds):
        try:
            state, log = step(state, datasets, cfg)
        except (ClientError, ValueError) as exc:
            raise RoundError(state.round + 1, exc) from exc
        logs.append(log)
        if on_round:
            on_round(log, state)
    models = [personalized_model(state, i, cfg, alpha_fn_for(cfg)) for i in range(len(datasets))]
    return ExperimentResult(logs, models, state, state.specs)


# Checkpoints: one .npz holding every array plus a JSON metadata string.

def save_checkpoint(state: FederationState, cfg: RunConfig, path: str | os.PathLike) -> None:
    arrays = {}
    for i, (b, m) in enumerate(zip(state.bank, state.client_models)):
        for l in b:
            arrays[f"bank/{i}/{l.name}/w"], arrays[f"bank/{i}/{l.name}/b"] = l.weight, l.bias
        for l in m:
            arrays[f"client/{i}/{l.name}/w"], arrays[f"client/{i}/{l.name}/b"] = l.weight, l.bias
    if state.shared is not None:
        for l in state.shared:
            arrays[f"shared/{l.name}/w"], arrays[f"shared/{l.name}/b"] = l.weight, l.bias
    meta = {
        "format": "pfedla-state",
        "version": STATE_VERSION,
        "round": state.round,
        "num_clients": state.num_clients,
        "specs": [asdict(s) for s in state.specs],
        "config": cfg.to_dict(),
        "rng_state": state.rng.bit_generator.state,
        "hypernets": [h.to_dict() for h in state.hypernets] if state.hypernets else None,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint_meta(path: str | os.PathLike) -> dict:
    with np.load(path) as z:
        if "meta" not in z:
            raise ValueError(f"{path}: not a pfedla checkpoint")
        meta = json.loads(z["meta"].tobytes().decode())
    if meta.get("format") != "pfedla-state":
        raise ValueError(f"{path}: not a pfedla checkpoint")
    if meta.get("version") != STATE_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    return meta


def load_checkpoint(path: str | os.PathLike) -> tuple[FederationState, RunConfig]:
    meta = read_checkpoint_meta(path)
    specs = [LayerSpec(**s) for s in meta["specs"]]
    with np.load(path) as z:
        def params(prefix):
            return LayeredParams([Layer(s.name, z[f"{prefix}/{s.name}/w"].copy(),
                                        z[f"{prefix}/{s.name}/b"].copy()) for s in specs])
        N = meta["num_clients"]
        bank = [params(f"bank/{i}") for i in range(N)]
        clients = [params(f"client/{i}") for i in range(N)]
        shared = params("shared") if f"shared/{specs[0].name}/w" in z else None
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    hns = [HyperNet.from_dict(h) for h in meta["hypernets"]] if meta["hypernets"] else None
    state = FederationState(specs, bank, clients, hns, rng, meta["round"], shared)
    return state, RunConfig.from_dict(meta["config"])
