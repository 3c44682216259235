import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tradeoff_lab import tensor as T
from tradeoff_lab.models import (ARCHITECTURES, AffineClassifier, CheckpointError, argmax_lowest, build_gcnn,
                                 build_lenet, build_model, build_stdcnn, checkpoint_bytes, checkpoint_from_bytes,
                                 load_checkpoint, model_spec, predict, predict_logits, save_checkpoint)


def param_count(model, layer):
    return model.params[f"{layer}.weight"].data.size + model.params[f"{layer}.bias"].data.size


def test_parameter_arithmetic():
    assert param_count(build_stdcnn(0), "conv1") == 10 * 1 * 3 * 3 + 10 == 100
    assert param_count(build_gcnn(0), "conv2") == 10 * 10 * 4 * 3 * 3 + 10 == 3610
    assert param_count(build_lenet(0), "conv1") == 32 * 1 * 5 * 5 + 32 == 832


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_spec_param_count_matches_tensors(arch):
    m = build_model(arch, 0)
    assert m.spec.param_count == sum(p.data.size for p in m.params.values())


def test_layer_lists():
    assert model_spec("stdcnn").layers[0] == "Conv(10,3,3)+Relu"
    assert model_spec("gcnn").layers[1] == "P4ConvP4(10,3,3)+Relu"
    assert model_spec("lenet").padding == 2
    with pytest.raises(ValueError):
        model_spec("resnet")


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_same_seed_rebuild_is_bit_identical(arch):
    a, b = build_model(arch, 7), build_model(arch, 7)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    c = build_model(arch, 8)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_zero_image_gives_constant_logits(arch):
    m = build_model(arch, 2)
    logits = predict_logits(m, np.zeros((3, 1, 28, 28)))
    assert logits.shape == (3, 10)
    np.testing.assert_array_equal(logits, np.broadcast_to(logits[0], logits.shape))


def test_zero_bias_zero_image_gives_zero_logits():
    # all biases start at zero, so the bias-propagated constant is 0
    assert np.all(predict_logits(build_stdcnn(0), np.zeros((1, 1, 28, 28))) == 0)


def test_predict_rules():
    logits = np.zeros((2, 10))
    logits[0, 3] = 1.0
    np.testing.assert_array_equal(argmax_lowest(logits), [3, 0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.floats(-100, 100))
def test_argmax_shift_invariance(seed, shift):
    logits = np.random.default_rng(seed).normal(size=(5, 10))
    np.testing.assert_array_equal(argmax_lowest(logits + shift), argmax_lowest(logits))


def test_predict_is_pure_and_checks_shape():
    m = build_stdcnn(1)
    x = np.random.default_rng(0).uniform(0, 1, (4, 1, 28, 28))
    np.testing.assert_array_equal(predict_logits(m, x), predict_logits(m, x))
    with pytest.raises(T.ShapeError):
        predict(m, np.zeros((2, 1, 27, 28)))


def test_eval_mode_ignores_dropout_rng():
    m = build_stdcnn(1)
    x = T.Tensor(np.random.default_rng(0).uniform(0, 1, (2, 1, 28, 28)))
    a = m.forward(x, train=False, rng=np.random.default_rng(1)).data
    b = m.forward(x, train=False, rng=np.random.default_rng(2)).data
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_checkpoint_round_trip_is_bit_exact(arch, tmp_path):
    m = build_model(arch, 3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.spec.arch == arch and back.spec.seed == 3
    for k in m.params:
        assert back.params[k].data.tobytes() == m.params[k].data.tobytes()
    assert checkpoint_bytes(back) == path.read_bytes()


def test_checkpoint_header_layout():
    raw = checkpoint_bytes(build_stdcnn(5))
    assert raw[:4] == b"ERLB"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 6 and raw[12:18] == b"stdcnn"
    assert int.from_bytes(raw[18:26], "little") == 5


def test_checkpoint_errors():
    raw = checkpoint_bytes(build_stdcnn(0))
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint_from_bytes(raw[:-3])
    with pytest.raises(CheckpointError, match="version"):
        checkpoint_from_bytes(raw[:4] + (2).to_bytes(4, "little") + raw[8:])


def test_affine_classifier():
    w, b = np.array([[1.0, -2.0], [0.5, 0.0]]), np.array([0.1, 0.2])
    m = AffineClassifier(w, b)
    x = np.array([[1.0, 1.0], [0.0, 2.0]])
    np.testing.assert_allclose(m.forward(T.Tensor(x)).data, x @ w.T + b)
    with pytest.raises(T.ShapeError):
        AffineClassifier(w, b, input_shape=(3,))
