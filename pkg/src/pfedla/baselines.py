"""Reference algorithms: FedAvg, local-only training and model-wise aggregation."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from pfedla.aggregation import WeightMatrix
from pfedla.data import ClientDataset
from pfedla.metrics_io import BYTES_PER_PARAM, RoundLog, Transmission
from pfedla.nn_engine import LayeredParams, init_params
from pfedla.orchestrator import (
    FederationState,
    RunConfig,
    ClientError,
    _evaluate,
    _finish_log,
    client_rng,
    client_update,
    personalized_round,
    sample_participants,
    specs_for,
)


def weighted_average(models: Sequence[LayeredParams], weights: Sequence[float]) -> LayeredParams:
    out = models[0].scale(weights[0])
    for m, w in zip(models[1:], weights[1:]):
        out = out + m.scale(w)
    return out


def fedavg_round(shared: LayeredParams, datasets: Sequence[ClientDataset], cfg: RunConfig,
                 round_index: int, participants: Sequence[int] | None = None) -> LayeredParams:
    """Participants train from ``shared``; the server averages with weights m_i / M."""
    if participants is None:
        participants = range(len(datasets))
    participants = list(participants)
    trained = []
    for i in participants:
        try:
            delta = client_update(shared, datasets[i], cfg, client_rng(cfg, round_index, i))
        except Exception as exc:
            raise ClientError(i, exc) from exc
        trained.append(shared + delta)
    sizes = np.array([datasets[i].num_train for i in participants], dtype=np.float64)
    return weighted_average(trained, sizes / sizes.sum())


def run_round_fedavg(state: FederationState, datasets, cfg: RunConfig):
    state = state.copy()
    t = state.round + 1
    participants = sample_participants(state.num_clients, cfg.participation_fraction, state.rng)
    log = RoundLog(round=t, participants=participants)
    for i in participants:
        for layer in state.shared:
            for direction in ("down", "up"):
                log.transmissions.append(
                    Transmission(t, i, direction, layer.name, layer.size * BYTES_PER_PARAM))
    state.shared = fedavg_round(state.shared, datasets, cfg, t, participants)
    state.bank = [state.shared.copy() for _ in range(state.num_clients)]
    state.round = t
    _evaluate(state, datasets, cfg, log)
    return state, _finish_log(log)


def run_round_local(state: FederationState, datasets, cfg: RunConfig):
    state = state.copy()
    t = state.round + 1
    participants = sample_participants(state.num_clients, cfg.participation_fraction, state.rng)
    log = RoundLog(round=t, participants=participants)
    for i in participants:
        try:
            delta = client_update(state.client_models[i], datasets[i], cfg, client_rng(cfg, t, i),
                                  state.specs)
        except Exception as exc:
            raise ClientError(i, exc) from exc
        state.client_models[i] = state.client_models[i] + delta
        state.bank[i] = state.client_models[i]
    state.round = t
    _evaluate(state, datasets, cfg, log)
    return state, _finish_log(log)


def local_only(datasets: Sequence[ClientDataset], cfg: RunConfig) -> list[LayeredParams]:
    """Per-client SGD from the common initial model, no communication at all."""
    specs = specs_for(datasets, cfg)
    init = init_params(specs, np.random.default_rng([cfg.seed, 0]))
    models = [init.copy() for _ in datasets]
    part_rng = np.random.default_rng([cfg.seed, 2])
    for t in range(1, cfg.rounds + 1):
        for i in sample_participants(len(datasets), cfg.participation_fraction, part_rng):
            models[i] = models[i] + client_update(models[i], datasets[i], cfg,
                                                  client_rng(cfg, t, i), specs)
    return models


def modelwise_weights(bank: Sequence[LayeredParams], i: int, tau: float = 1.0) -> np.ndarray:
    """One weight per peer: softmax of negative L2 distance between flattened models."""
    flat = [m.flatten() for m in bank]
    dist = np.array([np.linalg.norm(flat[i] - f) for f in flat])
    z = -dist / tau
    e = np.exp(z - z.max())
    return e / e.sum()


def modelwise_alpha(state: FederationState, i: int, cfg: RunConfig) -> WeightMatrix:
    w = modelwise_weights(state.bank, i, cfg.tau)
    return WeightMatrix(i, state.layer_names, np.tile(w, (len(state.specs), 1)))


def run_round_modelwise(state: FederationState, datasets, cfg: RunConfig):
    return personalized_round(state, datasets, cfg, modelwise_alpha, k=0, update_hypernets=False)


modelwise_round = run_round_modelwise
