import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sncl import datasets as ds
from sncl.errors import ConfigError, ParseError


@pytest.fixture(scope="module")
def mnist():
    return ds.load_mnist_subset()


def tiny_idx(tmp_path, n=3):
    imgs = (np.arange(n * 4) * 20 % 256).astype(np.uint8).reshape(n, 2, 2)
    labels = np.arange(n, dtype=np.uint8)
    ip, lp = tmp_path / "imgs", tmp_path / "labels.gz"
    ds.write_idx(ip, imgs)
    ds.write_idx(lp, labels)
    return imgs, labels, ip, lp


def test_idx_round_trip_byte_exact(tmp_path):
    imgs, labels, ip, lp = tiny_idx(tmp_path)
    assert ip.read_bytes() == ds.encode_idx(imgs)
    assert gzip.decompress(lp.read_bytes()) == ds.encode_idx(labels)
    data = ds.load_idx(ip, lp)
    assert np.array_equal(np.round(data.inputs * 255).astype(np.uint8).reshape(imgs.shape), imgs)
    assert np.array_equal(data.labels, labels)
    raw = ds.encode_idx(imgs)
    assert raw[:4] == b"\x00\x00\x08\x03"
    assert raw[4:8] == (3).to_bytes(4, "big")


def test_idx_truncated(tmp_path):
    _, _, ip, lp = tiny_idx(tmp_path)
    raw = ip.read_bytes()
    ip.write_bytes(raw[:-1])
    with pytest.raises(ParseError) as exc:
        ds.load_idx(ip, lp)
    assert exc.value.offset == len(raw) - 1
    ip.write_bytes(raw[:6])
    with pytest.raises(ParseError):
        ds.load_idx(ip, lp)
    ip.write_bytes(raw + b"\x00")
    with pytest.raises(ParseError):
        ds.load_idx(ip, lp)


def test_idx_bad_magic(tmp_path):
    _, _, ip, lp = tiny_idx(tmp_path)
    raw = bytearray(ip.read_bytes())
    raw[2] = 0x09
    ip.write_bytes(bytes(raw))
    with pytest.raises(ParseError) as exc:
        ds.load_idx(ip, lp)
    assert exc.value.offset == 0
    # images and labels swapped
    _, _, ip, lp = tiny_idx(tmp_path)
    with pytest.raises(ParseError):
        ds.load_idx(lp, ip)


def test_idx_count_mismatch(tmp_path):
    _, _, ip, _ = tiny_idx(tmp_path)
    lp = tmp_path / "short"
    ds.write_idx(lp, np.zeros(2, dtype=np.uint8))
    with pytest.raises(ParseError):
        ds.load_idx(ip, lp)


def test_bundled_subset(mnist):
    train, test = mnist
    assert train.inputs.shape == (4000, 784) and test.inputs.shape == (1000, 784)
    assert np.bincount(train.labels).tolist() == [400] * 10
    assert np.bincount(test.labels).tolist() == [100] * 10
    assert train.inputs.min() >= 0 and train.inputs.max() <= 1


def test_official_mnist_needs_location(monkeypatch, tmp_path):
    monkeypatch.delenv(ds.DATA_ENV, raising=False)
    with pytest.raises(ConfigError):
        ds.load_official_mnist()
    with pytest.raises(ConfigError):
        ds.load_official_mnist(tmp_path)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(2, 50), st.integers(0, 2**31))
def test_permutations_are_bijections(T, dim, seed):
    perms = ds.permutations(T, dim, seed)
    assert np.array_equal(perms[0], np.arange(dim))
    for p in perms:
        assert np.array_equal(np.sort(p), np.arange(dim))


def test_pmnist_preserves_pixel_multiset(mnist):
    train, test = mnist
    s = ds.build_pmnist(train, test, 3, seed=4, train_per_task=50, test_per_task=20)
    assert len(s.phases) == 3 and s.setting == "domain_il"
    perms = ds.permutations(3, 784, 4)
    for ph, perm in zip(s.phases, perms):
        assert len(ph.train) == 50 and len(ph.test) == 20
        unperm = ph.train.inputs[:, np.argsort(perm)]
        for row, label in zip(unperm[:5], ph.train.labels[:5]):
            match = np.flatnonzero((train.inputs == row).all(axis=1))
            assert len(match) >= 1 and train.labels[match[0]] == label


def test_rotation_identity_and_range(mnist):
    x = mnist[0].inputs[:20]
    assert np.allclose(ds.rotate_images(x, 0.0), x)
    r = ds.rotate_images(x, 1.1)
    assert r.shape == x.shape and r.min() >= 0 and r.max() <= 1


def smooth(images):
    # [1 2 1]/4 binomial blur along both axes
    k = np.array([0.25, 0.5, 0.25])
    imgs = images.reshape(-1, 28, 28)
    imgs = np.apply_along_axis(np.convolve, 2, imgs, k, "same")
    imgs = np.apply_along_axis(np.convolve, 1, imgs, k, "same")
    return imgs.reshape(len(images), -1)


def test_rotation_round_trip(mnist):
    x = smooth(mnist[0].inputs[:50])
    for angle in (0.3, 1.2, 2.5):
        back = ds.rotate_images(ds.rotate_images(x, angle), -angle)
        assert np.mean(np.abs(back - x)) < 0.02
    # raw strokes are sharper than bilinear resolves; the loss stays bounded
    raw = mnist[0].inputs[:50]
    back = ds.rotate_images(ds.rotate_images(raw, 1.2), -1.2)
    assert np.mean(np.abs(back - raw)) < 0.04


def test_rotation_quarter_turn_matches_rot90():
    img = np.random.default_rng(0).uniform(size=(28, 28))
    r = ds.rotate_images(img[None], np.pi / 2)[0]
    assert np.allclose(r, np.rot90(img, 1), atol=1e-9) or np.allclose(r, np.rot90(img, -1), atol=1e-9)


def test_rmnist_records_angles(mnist):
    s = ds.build_rmnist(*mnist, 2, seed=0, train_per_task=10, test_per_task=10)
    assert len(s.angles) == 2 and all(0 <= a < np.pi for a in s.angles)


def test_split_stream_disjoint_and_pure(mnist):
    train, test = mnist
    tasks = [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]
    s = ds.build_split(train, test, tasks, setting="class_il")
    seen = set()
    for ph, cs in zip(s.phases, tasks):
        labels = set(ph.train.labels.tolist()) | set(ph.test.labels.tolist())
        assert labels == set(cs)
        assert not labels & seen
        seen |= labels
    with pytest.raises(ConfigError):
        ds.build_split(train, test, [(0, 1), (1, 2)])


def test_mnist360_structure(mnist):
    s = ds.build_mnist360(*mnist, seed=0, per_pair=40, test_per_class=5)
    assert s.boundary_free and s.num_classes == 9 and s.setting == "gcl"
    assert len(s.phases) == 9
    for ph, pair in zip(s.phases, ds.MNIST360_PAIRS):
        assert 9 not in ph.train.labels
        assert set(ph.train.labels.tolist()) == set(pair)
        for i in range(0, len(ph.train), 16):
            assert set(ph.train.labels[i:i + 16].tolist()) == set(pair)
    (_, te, _), = s.eval_splits()
    assert 9 not in te.labels and len(te) == 45


def test_mnist360_angles_increase():
    # a single bright pixel off-centre; its rotated position tracks the angle
    img = np.zeros((1, 784))
    img[0, 14 * 28 + 24] = 1.0
    train = ds.LabeledSet(np.repeat(img, 9, axis=0), np.arange(9))
    s = ds.build_mnist360(train, train, seed=0, per_pair=20)
    phases = [p for p in s.phases if 0 in p.classes]
    zeros = np.concatenate([p.train.inputs[p.train.labels == 0] for p in phases])
    angles = []
    for z in zeros:
        yy, xx = np.unravel_index(np.argmax(z), (28, 28))
        angles.append(np.arctan2(-(yy - 13.5), xx - 13.5) % (2 * np.pi))
    steps = np.diff(np.unwrap(angles))
    # every step turns the same way by about 2*pi / 20
    assert np.all(np.sign(steps) == np.sign(steps[0]))
    assert np.allclose(np.abs(steps), 2 * np.pi / 20, atol=0.07)


def test_blobs():
    a = ds.synth_blobs(3, 10, 5, 0.1, seed=1)
    b = ds.synth_blobs(3, 10, 5, 0.1, seed=1)
    assert np.array_equal(a.inputs, b.inputs)
    assert np.bincount(a.labels).tolist() == [10, 10, 10]
    with pytest.raises(ConfigError):
        ds.synth_blobs(1, 10, 5, 0.1, seed=0)
    s = ds.blobs_split_stream(0, K=4, per_class=20, D=5)
    assert [ph.classes for ph in s.phases] == [(0, 1), (2, 3)]
