import numpy as np
import pytest

from fhe_edge.bfv.evaluator import decrypt
from fhe_edge.bfv.serialization import ciphertext_size
from fhe_edge.encode import BatchLayout, FixedPointCodec, batch_decode
from fhe_edge.exceptions import QuantizationOverflowError, UsageError
from fhe_edge.nn.quantize import EncryptionScope, quantize
from fhe_edge.protect import PLAINTEXT_PARAMETER_BYTES, choose_params, protect_model

from conftest import TINY_SCALE, deployment, tiny_model, word_keyset


def _slots(ct, keyset):
    return set(int(v) for v in batch_decode(decrypt(ct, keyset.secret_key),
                                            BatchLayout.from_params(keyset.params)))


def test_every_in_scope_parameter_is_encrypted(any_deployment):
    protected = any_deployment.protected
    qmodel = any_deployment.qmodel
    expected = sum(layer.parameter_count for layer in qmodel.encrypted_layers)
    assert protected.ciphertext_count == expected
    assert len(list(protected.ciphertexts())) == expected
    assert protected.logits_power == qmodel.logits_power
    assert protected.first_encrypted_index == qmodel.first_encrypted_index


def test_ciphertexts_hold_the_quantized_values():
    setup = deployment("full_square2x")
    t = setup.params.t
    for layer, qlayer in zip(setup.protected.layers, setup.qmodel.layers):
        for row, qrow in zip(layer.weights, qlayer.weights):
            for ct, value in zip(row, qrow):
                assert _slots(ct, setup.keyset) == {int(value) % t}
        for ct, value in zip(layer.bias, qlayer.bias):
            assert _slots(ct, setup.keyset) == {int(value) % t}


def test_cleartext_layers_stay_quantized():
    setup = deployment("last_layer")
    first = setup.protected.layers[0]
    assert not first.encrypted
    assert first.weights.tolist() == setup.qmodel.layers[0].weights.tolist()


def test_encryption_report(any_deployment):
    report = any_deployment.report
    count = any_deployment.protected.ciphertext_count
    assert report.parameter_count == count
    assert report.ciphertext_bytes == count * ciphertext_size(any_deployment.params)
    assert report.plaintext_bytes == count * PLAINTEXT_PARAMETER_BYTES
    assert report.expansion_ratio == pytest.approx(report.ciphertext_bytes /
                                                   report.plaintext_bytes)
    assert report.peak_working_bytes > report.ciphertext_bytes
    assert report.time_s >= 0


def test_plan_travels_with_the_model(any_deployment):
    plan = any_deployment.protected.metadata["plan"]
    assert plan["depth"] == any_deployment.plan.depth
    assert int(plan["max_bound"]) == any_deployment.plan.max_bound
    assert any_deployment.protected.metadata["name"] == any_deployment.model.name


def test_workers_do_not_change_the_output():
    setup = deployment("full_no_act")
    serial, _ = protect_model(setup.qmodel, setup.qmodel.scope, setup.keyset,
                              np.random.default_rng(3))
    threaded, _ = protect_model(setup.qmodel, setup.qmodel.scope, setup.keyset,
                                np.random.default_rng(3), workers=3)
    assert list(serial.ciphertexts()) == list(threaded.ciphertexts())


def test_scope_must_match_quantization():
    setup = deployment("full_no_act")
    with pytest.raises(UsageError):
        protect_model(setup.qmodel, EncryptionScope.LAST_LAYER_ONLY, setup.keyset)


def test_plaintext_modulus_too_small():
    qmodel = quantize(tiny_model(), FixedPointCodec(TINY_SCALE), "full")
    # worst case 144 needs t > 288
    with pytest.raises(QuantizationOverflowError):
        protect_model(qmodel, "full", word_keyset())


def test_choose_params():
    plan = deployment("last_layer").plan
    toy = choose_params(plan, None)
    assert toy.security_level is None
    assert toy.t > 2 * plan.max_bound
    secure = choose_params(plan, 128)
    assert secure.security_level == 128
    assert secure.t > 2 * plan.max_bound
