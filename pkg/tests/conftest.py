import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from pfedla.data import PartitionSpec, SynthSpec, partition_noniid1, synth_generate  # noqa: E402
from pfedla.nn_engine import Batch, LayerSpec, init_params  # noqa: E402


def random_net(rng, dims, acts=None):
    if acts is None:
        acts = ["relu"] * (len(dims) - 2) + ["softmax_output"]
    specs = [LayerSpec(f"l{i}", a, b, act) for i, (a, b, act) in enumerate(zip(dims, dims[1:], acts))]
    params = init_params(specs, rng)
    for layer in params:
        layer.bias[:] = rng.normal(scale=0.3, size=layer.bias.shape)
    return specs, params


def random_batch(rng, n, d, C):
    return Batch(rng.normal(size=(n, d)), rng.integers(0, C, size=n))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_datasets():
    """Four clients, three of six classes each, equal sizes."""
    pool = synth_generate(SynthSpec(6, 5, 40, 1.0, seed=3))
    return partition_noniid1(pool, PartitionSpec("noniid1", 4, classes_per_client=3, seed=3))


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py::test_criterion_" in report.nodeid:
        name = report.nodeid.split("::")[-1].replace("test_criterion_", "")
        _ACCEPTANCE.append((name, report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, duration in _ACCEPTANCE:
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}  ({duration:.1f}s)")
