import numpy as np
import pytest

from oracles import assert_grad_close, central_difference, hn_alpha_loop
from pfedla.hypernet import (
    HyperNet,
    HyperUpdateConfig,
    hn_forward,
    hn_init,
    hn_update,
    surrogate_value,
)
from pfedla.nn_engine import DimensionError, Layer, LayeredParams


def randomize_heads(hn, rng, scale=0.5):
    for layer in hn.trunk:
        layer.bias[:] = rng.normal(scale=scale, size=layer.bias.shape)
    for head in hn.heads:
        head.weight[:] = rng.normal(scale=scale, size=head.weight.shape)
        head.bias[:] = rng.normal(scale=scale, size=head.bias.shape)
    return hn


def make_bank(rng, N, names=("fc1", "fc2"), dims=(3, 4, 2)):
    return [LayeredParams([Layer(n, rng.normal(size=(a, b)), rng.normal(size=b))
                           for n, a, b in zip(names, dims, dims[1:])]) for _ in range(N)]


def test_init_gives_uniform_alpha():
    hn = hn_init(0, 8, ["a", "b", "c"], 5, [16], seed=1)
    np.testing.assert_array_equal(hn_forward(hn).values, np.full((3, 5), 0.2))


def test_single_client_alpha_is_one():
    hn = randomize_heads(hn_init(0, 4, 2, 1, [8], seed=0), np.random.default_rng(0))
    np.testing.assert_array_equal(hn_forward(hn).values, np.ones((2, 1)))


def test_init_is_seeded():
    assert hn_init(3, 8, 3, 10, [32], seed=7).equal(hn_init(3, 8, 3, 10, [32], seed=7))
    assert not hn_init(3, 8, 3, 10, [32], seed=7).equal(hn_init(3, 8, 3, 10, [32], seed=8))


def test_parameter_count():
    hn = hn_init(0, 8, 3, 10, [32], seed=0)
    enumerated = sum(l.weight.size + l.bias.size for l in hn.trunk) + \
        sum(l.weight.size + l.bias.size for l in hn.heads)
    assert enumerated == hn.num_params == 8 * 32 + 32 + 3 * (32 * 10 + 10)


def test_forward_matches_loop(rng):
    hn = randomize_heads(hn_init(1, 5, 3, 4, [6, 7], seed=2), rng)
    expect = hn_alpha_loop(hn.embedding.tolist(),
                           [(l.weight.tolist(), l.bias.tolist()) for l in hn.trunk],
                           [(l.weight.tolist(), l.bias.tolist()) for l in hn.heads])
    np.testing.assert_allclose(hn_forward(hn).values, expect, rtol=0, atol=1e-12)


def _fd_instance(seed, hidden=(4,)):
    rng = np.random.default_rng(seed)
    N = 3
    hn = randomize_heads(hn_init(1, 3, ["fc1", "fc2"], N, hidden, seed=rng), rng)
    bank = make_bank(rng, N)
    delta = make_bank(rng, 1)[0].scale(0.3)
    return hn, bank, delta


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("hidden", [(4,), (), (3, 4)])
def test_update_matches_finite_differences(seed, hidden):
    hn, bank, delta = _fd_instance(seed, hidden)
    cfg = HyperUpdateConfig(eta_v=0.5, eta_psi=0.25)
    new = hn_update(hn, bank, delta, cfg)
    work = hn.copy()

    def g():
        return surrogate_value(work, bank, delta)

    assert_grad_close((new.embedding - hn.embedding) / 0.5, central_difference(g, work.embedding))
    for old, upd, cur in zip(list(hn.trunk) + list(hn.heads), list(new.trunk) + list(new.heads),
                             list(work.trunk) + list(work.heads)):
        assert_grad_close((upd.weight - old.weight) / 0.25, central_difference(g, cur.weight))
        assert_grad_close((upd.bias - old.bias) / 0.25, central_difference(g, cur.bias))


def test_zero_delta_leaves_hypernet_unchanged(rng):
    hn, bank, delta = _fd_instance(0)
    assert hn_update(hn, bank, delta.zeros_like()).equal(hn)


def test_single_client_update_is_zero(rng):
    hn = randomize_heads(hn_init(0, 3, ["fc1", "fc2"], 1, [4], seed=0), rng)
    bank = make_bank(rng, 1)
    assert hn_update(hn, bank, make_bank(rng, 1)[0]).equal(hn)


def test_update_rejects_shape_mismatch(rng):
    hn, bank, delta = _fd_instance(0)
    bad = make_bank(rng, 1, dims=(3, 5, 2))[0]
    with pytest.raises(DimensionError):
        hn_update(hn, bank, bad)
    with pytest.raises(DimensionError):
        hn_update(hn, bank[:2], delta)


@pytest.mark.parametrize("seed", range(10))
def test_aligned_delta_raises_weight_on_that_peer(seed):
    rng = np.random.default_rng(seed)
    N, j = 4, 2
    hn = randomize_heads(hn_init(0, 4, ["fc1"], N, [6], seed=rng), rng, scale=0.2)
    # bank entries live on disjoint coordinates, so only entry j correlates with the delta
    bank = []
    for peer in range(N):
        w = np.zeros((N, 1))
        w[peer, 0] = rng.uniform(0.5, 2.0)
        bank.append(LayeredParams([Layer("fc1", w, np.zeros(1))]))
    delta = bank[j].scale(0.7)
    before = hn_forward(hn).values[0, j]
    after = hn_forward(hn_update(hn, bank, delta, HyperUpdateConfig(0.1, 0.1))).values[0, j]
    assert after >= before


def test_checkpoint_roundtrip(rng):
    hn = randomize_heads(hn_init(2, 5, ["a", "b"], 3, [4], seed=1), rng)
    back = HyperNet.loads(hn.dumps())
    assert back.equal(hn)
    np.testing.assert_array_equal(hn_forward(back).values, hn_forward(hn).values)
    bad = hn.to_dict()
    bad["version"] = 99
    with pytest.raises(ValueError):
        HyperNet.from_dict(bad)


def test_step_sizes_must_be_positive():
    with pytest.raises(ValueError):
        HyperUpdateConfig(0.0, 0.1)
