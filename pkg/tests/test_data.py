import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfedla.data import (
    IdxParseError,
    PartitionError,
    PartitionSpec,
    SamplePool,
    SynthSpec,
    load_idx,
    paired_assignment,
    partition_noniid1,
    partition_noniid2,
    ring_assignment,
    split_train_test,
    synth_centers,
    synth_generate,
    write_idx,
)


def test_synth_counts_and_determinism():
    spec = SynthSpec(2, 3, 10, 0.5, seed=4)
    pool = synth_generate(spec)
    assert len(pool) == 20
    assert pool.histogram().tolist() == [10, 10]
    assert pool.equal(synth_generate(spec))
    assert not pool.equal(synth_generate(SynthSpec(2, 3, 10, 0.5, seed=5)))


def test_synth_tiny_spread_nearest_center_is_perfect():
    spec = SynthSpec(6, 4, 25, 1e-6, seed=1)
    pool = synth_generate(spec)
    centers = synth_centers(spec)
    d = ((pool.inputs[:, None, :] - centers[None]) ** 2).sum(axis=2)
    assert np.mean(d.argmin(axis=1) == pool.labels) == 1.0


def _held_ids(pool, clients):
    """Map every client sample back to a pool row; rows are unique (continuous data)."""
    index = {row.tobytes(): i for i, row in enumerate(pool.inputs)}
    ids = []
    for c in clients:
        for part in (c.train, c.test):
            ids.extend(index[row.tobytes()] for row in part.inputs)
    return ids


def test_noniid1_single_client_takes_everything():
    pool = synth_generate(SynthSpec(3, 2, 10, 1.0, seed=0))
    (client,) = partition_noniid1(pool, PartitionSpec("noniid1", 1, classes_per_client=3))
    assert client.class_histogram.tolist() == [10, 10, 10]
    assert len(client.train) + len(client.test) == 30


def test_noniid1_four_equal_classes_per_client():
    pool = synth_generate(SynthSpec(9, 3, 60, 1.0, seed=2))
    clients = partition_noniid1(pool, PartitionSpec("noniid1", 10, classes_per_client=4, seed=2))
    assert len(clients) == 10
    for c in clients:
        nz = c.class_histogram[c.class_histogram > 0]
        assert len(nz) == 4 and len(set(nz.tolist())) == 1
    total = sum(c.class_histogram for c in clients)
    assert np.all(total <= pool.histogram())
    ids = _held_ids(pool, clients)
    assert len(ids) == len(set(ids))


def test_noniid1_explicit_amount_and_shortage():
    pool = synth_generate(SynthSpec(4, 2, 10, 1.0, seed=0))
    spec = PartitionSpec("noniid1", 3, classes_per_client=2, samples_per_class=6)
    with pytest.raises(PartitionError) as info:
        partition_noniid1(pool, spec, [[0, 1], [0, 2], [1, 3]])
    assert info.value.cls == 0 and "class 0" in str(info.value)


def test_ring_and_paired_assignments():
    ring = ring_assignment(8, 4, 8)
    assert ring[0] == [0, 1, 2, 3] and ring[7] == [0, 1, 2, 7]
    for i in range(8):
        assert len(set(ring[i]) & set(ring[(i + 1) % 8])) == 3
        assert len(set(ring[i]) & set(ring[(i + 4) % 8])) == 0
    pairs = paired_assignment(6, 4, 9, seed=1)
    assert pairs[0] == pairs[1] and pairs[2] == pairs[3] and pairs[4] == pairs[5]


def test_noniid2_uniform_when_ratio_one():
    pool = synth_generate(SynthSpec(5, 2, 40, 1.0, seed=0))
    clients = partition_noniid2(pool, PartitionSpec("noniid2", 4, dominant_classes=2, skew_ratio=1.0))
    for c in clients:
        assert len(set(c.class_histogram.tolist())) == 1


def test_noniid2_skew_ratio():
    pool = synth_generate(SynthSpec(10, 2, 200, 1.0, seed=0))
    clients = partition_noniid2(pool, PartitionSpec("noniid2", 5, dominant_classes=2,
                                                    skew_ratio=4.0, seed=3))
    for c in clients:
        h = np.sort(c.class_histogram)
        assert np.all(h > 0)
        assert h[-1] == h[-2] and h[-3] == h[0]
        assert h[-1] / h[0] == pytest.approx(4.0, abs=1 / h[0])
    assert np.all(sum(c.class_histogram for c in clients) <= pool.histogram())
    ids = _held_ids(pool, clients)
    assert len(ids) == len(set(ids))


def test_noniid2_shortage():
    pool = synth_generate(SynthSpec(3, 2, 5, 1.0, seed=0))
    with pytest.raises(PartitionError):
        partition_noniid2(pool, PartitionSpec("noniid2", 4, dominant_classes=1, skew_ratio=4.0))


def test_split_ten_samples():
    pool = SamplePool(np.arange(10.0)[:, None], np.zeros(10, dtype=int), 1)
    train, test = split_train_test(pool, seed=0)
    assert (len(train), len(test)) == (7, 3)
    t2, s2 = split_train_test(pool, seed=0)
    assert train.equal(t2) and test.equal(s2)
    assert set(train.inputs[:, 0]).isdisjoint(test.inputs[:, 0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(2, 40), min_size=1, max_size=5), st.integers(0, 1000))
def test_split_is_stratified(counts, seed):
    labels = np.concatenate([np.full(n, c) for c, n in enumerate(counts)])
    pool = SamplePool(np.arange(len(labels), dtype=float)[:, None], labels, len(counts))
    train, test = split_train_test(pool, seed)
    for c, n in enumerate(counts):
        frac = train.histogram()[c] / n
        assert 0.7 - 1 / n <= frac <= 0.7 + 1 / n
        assert abs(train.histogram()[c] - 0.7 * n) <= 1
    assert len(train) + len(test) == len(pool)


def test_split_needs_two_per_class():
    pool = SamplePool(np.zeros((3, 1)), np.array([0, 0, 1]), 2)
    with pytest.raises(PartitionError):
        split_train_test(pool)


def test_csv_roundtrip(tmp_path):
    pool = synth_generate(SynthSpec(3, 4, 5, 0.7, seed=9))
    path = tmp_path / "pool.csv"
    pool.to_csv(path)
    assert path.read_text().splitlines()[0] == "feature_0,feature_1,feature_2,feature_3,label"
    assert SamplePool.from_csv(path, 3).equal(pool)


# IDX fixtures, written byte by byte: two 2x3 images and their labels.
IMAGES = bytes([0x00, 0x00, 0x08, 0x03,
                0x00, 0x00, 0x00, 0x02,
                0x00, 0x00, 0x00, 0x02,
                0x00, 0x00, 0x00, 0x03,
                0, 51, 102, 153, 204, 255,
                255, 0, 255, 0, 255, 0])
LABELS = bytes([0x00, 0x00, 0x08, 0x01,
                0x00, 0x00, 0x00, 0x02,
                7, 3])


@pytest.fixture
def idx_pair(tmp_path):
    def write(images=IMAGES, labels=LABELS, gz=False):
        ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
        ip.write_bytes(gzip.compress(images) if gz else images)
        lp.write_bytes(labels)
        return ip, lp
    return write


@pytest.mark.parametrize("gz", [False, True])
def test_idx_parses_known_samples(idx_pair, gz):
    pool = load_idx(*idx_pair(gz=gz))
    assert len(pool) == 2 and pool.input_dim == 6
    np.testing.assert_allclose(pool.inputs[0], [0, 0.2, 0.4, 0.6, 0.8, 1.0])
    np.testing.assert_allclose(pool.inputs[1], [1, 0, 1, 0, 1, 0])
    assert pool.labels.tolist() == [7, 3]


def test_idx_truncated_header(idx_pair):
    with pytest.raises(IdxParseError) as info:
        load_idx(*idx_pair(images=IMAGES[:4]))
    assert info.value.offset == 4


def test_idx_bad_magic(idx_pair):
    with pytest.raises(IdxParseError) as info:
        load_idx(*idx_pair(images=LABELS))
    assert info.value.offset == 0 and "magic" in str(info.value)


def test_idx_truncated_pixels(idx_pair):
    with pytest.raises(IdxParseError) as info:
        load_idx(*idx_pair(images=IMAGES[:-2]))
    assert info.value.offset == len(IMAGES) - 2


def test_idx_count_mismatch(idx_pair):
    labels = LABELS[:7] + bytes([3]) + bytes([7, 3, 1])
    with pytest.raises(IdxParseError, match="label count 3 != image count 2"):
        load_idx(*idx_pair(labels=labels))


def test_write_idx_roundtrip(tmp_path):
    imgs = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
    write_idx(imgs, [1, 0], tmp_path / "i", tmp_path / "l")
    assert (tmp_path / "i").read_bytes()[:16] == bytes.fromhex("00000803000000020000000300000004")
    pool = load_idx(tmp_path / "i", tmp_path / "l")
    np.testing.assert_allclose(pool.inputs * 255, imgs.reshape(2, -1))
