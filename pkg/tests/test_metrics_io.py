import numpy as np
import pytest

from pfedla.data import SamplePool
from pfedla.metrics_io import (
    MissingSnapshotError,
    RoundLog,
    Transmission,
    comm_cost,
    evaluate_accuracy,
    export_heatmap,
    export_weight_trace,
    heatmap_matrix,
    read_jsonl,
    total_cost,
    write_jsonl,
)
from pfedla.nn_engine import Layer, LayeredParams, LayerSpec, init_params, mlp_specs
from pfedla.orchestrator import RunConfig, run_experiment

CFG = dict(rounds=3, batch_size=8, eta=0.1, hidden=(6, 5), seed=2, eta_v=0.5, eta_psi=0.5)


def test_accuracy_tie_rule_on_uniform_model():
    specs = [LayerSpec("out", 2, 3, "softmax_output")]
    params = LayeredParams([Layer("out", np.zeros((2, 3)), np.zeros(3))])
    hit = SamplePool(np.ones((1, 2)), np.array([0]), 3)
    miss = SamplePool(np.ones((1, 2)), np.array([2]), 3)
    assert evaluate_accuracy(params, specs, hit) == 1.0
    assert evaluate_accuracy(params, specs, miss) == 0.0


def test_accuracy_memorizing_model():
    specs = [LayerSpec("out", 4, 4, "softmax_output")]
    params = LayeredParams([Layer("out", 10 * np.eye(4), np.zeros(4))])
    split = SamplePool(np.eye(4)[[0, 1, 2, 3, 1]], np.array([0, 1, 2, 3, 1]), 4)
    assert evaluate_accuracy(params, specs, split) == 1.0


def test_accuracy_matches_per_sample_loop(rng):
    specs = mlp_specs(3, [5], 4)
    params = init_params(specs, rng)
    split = SamplePool(rng.normal(size=(30, 3)), rng.integers(0, 4, 30), 4)
    correct = 0
    for x, y in zip(split.inputs, split.labels):
        h = np.maximum(x @ params[0].weight + params[0].bias, 0)
        z = list(h @ params[1].weight + params[1].bias)
        correct += z.index(max(z)) == y
    assert evaluate_accuracy(params, specs, split) == correct / 30


def test_accuracy_empty_split():
    specs = [LayerSpec("out", 2, 2, "softmax_output")]
    params = LayeredParams([Layer("out", np.zeros((2, 2)), np.zeros(2))])
    with pytest.raises(ValueError):
        evaluate_accuracy(params, specs, SamplePool(np.zeros((0, 2)), np.zeros(0, int), 2))


def test_comm_cost_sums_per_round_and_direction():
    recs = [Transmission(1, 0, "down", "a", 8), Transmission(1, 1, "down", "a", 16),
            Transmission(1, 0, "up", "a", 8), Transmission(2, 0, "up", "b", 24)]
    assert comm_cost(recs) == {1: {"down": 24, "up": 8}, 2: {"down": 0, "up": 24}}


def test_local_run_costs_nothing(small_datasets):
    logs = run_experiment(RunConfig(algorithm="local", **CFG), small_datasets).logs
    assert total_cost(logs)["bytes_down"] == total_cost(logs)["bytes_up"] == 0


@pytest.mark.parametrize("algorithm", ["pfedla", "fedavg", "modelwise"])
def test_full_model_cost_closed_form(small_datasets, algorithm):
    res = run_experiment(RunConfig(algorithm=algorithm, **CFG), small_datasets)
    P = res.state.bank[0].num_params
    cost = total_cost(res.logs)
    assert cost["bytes_down"] == cost["bytes_up"] == 3 * 4 * P * 8
    assert cost["mbytes_down"] == cost["bytes_down"] / 2 ** 20


def test_heur_k1_saves_exactly_retained_layers(small_datasets):
    full = run_experiment(RunConfig(algorithm="pfedla", **CFG), small_datasets)
    heur = run_experiment(RunConfig(algorithm="heurpfedla", k=1, **CFG), small_datasets)
    sizes = full.state.bank[0].layer_sizes()
    saved = sum(sizes[name] * 8 for log in heur.logs if log.retained
                for names in log.retained.values() for name in names)
    assert total_cost(full.logs)["bytes_down"] - total_cost(heur.logs)["bytes_down"] == saved
    assert total_cost(full.logs)["bytes_up"] == total_cost(heur.logs)["bytes_up"]


@pytest.fixture
def pfedla_logs(small_datasets):
    return run_experiment(RunConfig(algorithm="pfedla", **CFG), small_datasets).logs


def test_weight_trace(pfedla_logs, tmp_path):
    text = export_weight_trace(pfedla_logs, 1, [0, 1, 3])
    rows = [r.split(",") for r in text.splitlines()]
    assert rows[0] == ["round", "layer", "peer", "weight"]
    round0 = [r for r in rows[1:] if r[0] == "0"]
    assert len(round0) == 3 * 3
    assert all(float(r[3]) == 0.25 for r in round0)
    for t in range(4):
        assert sum(r[0] == str(t) for r in rows[1:]) == 3 * 3
    export_weight_trace(pfedla_logs, 1, [0, 1, 3], tmp_path / "a.csv")
    export_weight_trace(pfedla_logs, 1, [0, 1, 3], tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_weight_trace_without_snapshots(small_datasets):
    logs = run_experiment(RunConfig(algorithm="fedavg", **CFG), small_datasets).logs
    with pytest.raises(MissingSnapshotError):
        export_weight_trace(logs, 0, [0])


def test_heatmap(pfedla_logs):
    np.testing.assert_array_equal(heatmap_matrix(pfedla_logs, "fc2", 0), np.full((4, 4), 0.25))
    H = heatmap_matrix(pfedla_logs, "fc2", 3)
    np.testing.assert_allclose(H.sum(axis=1), 1.0, atol=1e-9)
    text = export_heatmap(pfedla_logs, "fc2", 3)
    assert text.splitlines()[0] == "client,peer_0,peer_1,peer_2,peer_3"
    with pytest.raises(MissingSnapshotError, match="round 17"):
        export_heatmap(pfedla_logs, "fc2", 17)


def test_snapshot_cadence(small_datasets):
    logs = run_experiment(RunConfig(algorithm="pfedla", snapshot_every=2, eval_every=3, **CFG),
                          small_datasets).logs
    assert [l.weights is not None for l in logs] == [True, False, True, False]
    assert [l.accuracies is not None for l in logs] == [True, False, False, True]


def test_jsonl_roundtrip(pfedla_logs, tmp_path):
    path = tmp_path / "log.jsonl"
    write_jsonl(pfedla_logs, path)
    back = read_jsonl(path)
    assert [l.to_json() for l in back] == [l.to_json() for l in pfedla_logs]
    for log in back:
        assert all(0 <= a <= 1 for a in log.accuracies)


def test_roundlog_missing_client_snapshot():
    with pytest.raises(MissingSnapshotError):
        RoundLog(round=1).weight_matrix(0)
