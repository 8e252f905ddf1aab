"""Desk-scale scenarios: the paired 9-class toy and the 8-client class ring."""

from __future__ import annotations

import numpy as np

from pfedla.data import (
    ClientDataset,
    PartitionSpec,
    SynthSpec,
    paired_assignment,
    partition_noniid1,
    ring_assignment,
    synth_generate,
)
from pfedla.orchestrator import RunConfig

# Hypernetwork steps are larger than the library default: client deltas at this
# scale are small, so 0.01 leaves the weights essentially uniform for 100 rounds.
TOY_CONFIG = dict(rounds=100, local_epochs=1, batch_size=32, eta=0.05,
                  hidden=(32, 32), eta_v=1.0, eta_psi=1.0)
RING_CONFIG = dict(rounds=150, local_epochs=1, batch_size=32, eta=0.05,
                   hidden=(32, 32), eta_v=1.0, eta_psi=1.0)


def paired_toy(seed: int = 0, num_clients: int = 6, num_classes: int = 9,
               classes_per_client: int = 4, samples_per_class: int = 300,
               spread: float = 1.5, input_dim: int = 16) -> list[ClientDataset]:
    """Clients 2p and 2p+1 draw from the same 4-of-9 class distribution."""
    pool = synth_generate(SynthSpec(num_classes, input_dim, samples_per_class, spread, seed))
    spec = PartitionSpec("noniid1", num_clients, classes_per_client, seed=seed)
    return partition_noniid1(pool, spec,
                             paired_assignment(num_clients, classes_per_client, num_classes, seed))


def ring_task(seed: int = 0, num_clients: int = 8, classes_per_client: int = 4,
              samples_per_class: int = 200, spread: float = 1.5,
              input_dim: int = 16) -> list[ClientDataset]:
    """Client i holds classes i..i+3 (mod 8): neighbours share 3 classes, i and i+4 none."""
    pool = synth_generate(SynthSpec(num_clients, input_dim, samples_per_class, spread, seed))
    spec = PartitionSpec("noniid1", num_clients, classes_per_client, seed=seed)
    return partition_noniid1(pool, spec,
                             ring_assignment(num_clients, classes_per_client, num_clients))


def class_overlap(datasets: list[ClientDataset]) -> np.ndarray:
    held = [set(np.flatnonzero(d.class_histogram).tolist()) for d in datasets]
    return np.array([[len(a & b) for b in held] for a in held])


def toy_config(algorithm: str, seed: int, **overrides) -> RunConfig:
    return RunConfig(algorithm=algorithm, seed=seed, **{**TOY_CONFIG, **overrides})


def ring_config(seed: int, **overrides) -> RunConfig:
    return RunConfig(algorithm="pfedla", seed=seed, **{**RING_CONFIG, **overrides})
