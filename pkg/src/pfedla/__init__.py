"""Layer-wise personalized federated aggregation with per-client hypernetworks."""

from pfedla.aggregation import (
    WeightMatrix,
    aggregate_personalized,
    normalize_weights,
    select_retained_layers,
)
from pfedla.data import (
    ClientDataset,
    PartitionSpec,
    SamplePool,
    SynthSpec,
    load_idx,
    partition_noniid1,
    partition_noniid2,
    split_train_test,
    synth_generate,
)
from pfedla.hypernet import HyperNet, HyperUpdateConfig, hn_forward, hn_init, hn_update
from pfedla.nn_engine import (
    Batch,
    LayeredParams,
    LayerSpec,
    backward,
    cross_entropy,
    forward,
    sgd_step,
)
from pfedla.orchestrator import (
    FederationState,
    RunConfig,
    client_update,
    run_experiment,
    run_round_heur,
    run_round_pfedla,
    sample_participants,
)

__version__ = "0.1.0"
