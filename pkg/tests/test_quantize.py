import os
import tempfile
import unittest

import logassert
import numpy as np
import pytest

from fhe_edge.encode import FixedPointCodec
from fhe_edge.exceptions import (
    QuantizationOverflowError, ScaleMismatchError, UnsupportedLayerError
)
from fhe_edge.nn.model import ActivationKind, forward
from fhe_edge.nn.quantize import (
    EncryptionScope, QuantizedModel, load_quantized, oracle_forward_exact, oracle_forward_int,
    quantize, run_cleartext_prefix, save_quantized
)

from conftest import TINY_FEATURES, TINY_SCALE, VARIANTS, tiny_model

CODEC = FixedPointCodec(TINY_SCALE)


def _quantized(variant):
    activation, scope = VARIANTS[variant]
    return quantize(tiny_model(activation), CODEC, scope)


@pytest.mark.parametrize("variant, powers, logits_power", [
    ("last_layer", [(1, 2, 1), (1, 2, 2)], 2),
    ("full_no_act", [(1, 2, 2), (2, 3, 3)], 3),
    ("full_square2x", [(1, 2, 4), (4, 5, 5)], 5),
])
def test_scale_powers(variant, powers, logits_power):
    qmodel = _quantized(variant)
    assert [(layer.input_power, layer.bias_power, layer.output_power)
            for layer in qmodel.layers] == powers
    assert qmodel.logits_power == logits_power


def test_weights_and_bias_quantization():
    qmodel = _quantized("full_square2x")
    first, second = qmodel.layers
    assert first.weights.tolist() == [[2, -1], [3, 2]]
    assert first.bias.tolist() == [2, -4]
    assert second.weights.tolist() == [[4, -2], [-3, 1]]
    # 0.125 at power 5
    assert second.bias.tolist() == [0, 128]


def test_scope_marks_encrypted_layers():
    assert [layer.encrypted for layer in _quantized("last_layer").layers] == [False, True]
    assert [layer.encrypted for layer in _quantized("full_no_act").layers] == [True, True]
    assert _quantized("last_layer").first_encrypted_index == 1


def test_relu_cannot_be_encrypted():
    with pytest.raises(UnsupportedLayerError):
        quantize(tiny_model(ActivationKind.RELU), CODEC, EncryptionScope.FULL_CLASSIFIER)


def test_oracle_by_hand():
    qmodel = _quantized("full_no_act")
    # [0.5, -0.25] at power 1 is [2, -1]; logits 0.4375, -0.203125 at power 3
    assert oracle_forward_exact(qmodel, [[2, -1]]).tolist() == [[28, -13]]
    assert oracle_forward_int(qmodel, [[2, -1]], 97).tolist() == [[28, 84]]


def test_oracle_accepts_slot_representatives():
    qmodel = _quantized("full_no_act")
    assert oracle_forward_int(qmodel, [[2, 96]], 97).tolist() == [[28, 84]]


@pytest.mark.parametrize("variant", ["full_no_act", "full_square2x"])
def test_exact_models_match_float_forward(variant):
    qmodel = _quantized(variant)
    activation, _ = VARIANTS[variant]
    x_int = CODEC.quantize(TINY_FEATURES, 1)
    logits = oracle_forward_exact(qmodel, x_int)
    expected = forward(tiny_model(activation), TINY_FEATURES) * TINY_SCALE ** qmodel.logits_power
    np.testing.assert_array_equal(logits.astype(float), expected)


def test_cleartext_layers_rescale():
    qmodel = _quantized("last_layer")
    x_int = CODEC.quantize(TINY_FEATURES, 1)
    hidden = run_cleartext_prefix(qmodel, x_int)
    real = np.maximum(TINY_FEATURES @ np.array([[0.5, -0.25], [0.75, 0.5]]).T +
                      np.array([0.125, -0.25]), 0)
    assert np.max(np.abs(hidden.astype(float) / TINY_SCALE - real)) <= 0.5 / TINY_SCALE
    assert hidden.min() >= 0


def test_power_mismatch_is_detected():
    qmodel = _quantized("full_no_act")
    broken = QuantizedModel([qmodel.layers[0], qmodel.layers[1]._replace(input_power=3)],
                            qmodel.scale, qmodel.scope)
    with pytest.raises(ScaleMismatchError):
        oracle_forward_exact(broken, [[1, 1]])


@pytest.mark.parametrize("variant, depth, max_bound", [
    ("last_layer", 1, 42),
    ("full_no_act", 2, 144),
    ("full_square2x", 3, 8064),
])
def test_scale_plan(variant, depth, max_bound):
    plan = _quantized(variant).plan()
    assert plan.depth == depth
    assert plan.max_bound == max_bound
    assert plan.input_bound == TINY_SCALE
    assert 2 ** plan.required_plain_bits > 2 * max_bound


class PlanOverflowTestCase(unittest.TestCase):
    def setUp(self):
        logassert.setup(self, 'fhe_edge.nn.quantize')

    def test_modulus_too_small(self):
        plan = _quantized("full_no_act").plan()
        plan.check(577)
        with self.assertRaises(QuantizationOverflowError):
            plan.check(257)
        self.assertLoggedError("144", "257")


class QuantizedFileTestCase(unittest.TestCase):
    def test_roundtrip(self):
        path = os.path.join(tempfile.mkdtemp(), "model.q.json")
        qmodel = _quantized("full_square2x")
        save_quantized(qmodel, path)
        loaded = load_quantized(path)
        self.assertEqual(loaded, qmodel)
        self.assertEqual(loaded.metadata, {"name": "tiny-square_plus_two"})
