import os
import struct
import tempfile
import unittest

import logassert
import numpy as np
import pytest

from fhe_edge.bfv.params import security_preset
from fhe_edge.bfv.serialization import SECRET_KEY_MARKER, ciphertext_size, serialize_plaintext
from fhe_edge.encode import BatchLayout, encode_scalar
from fhe_edge.exceptions import ChecksumError, SecretMaterialError, SerializationError
from fhe_edge.package import (
    build_package, crc32, load_package, read_package, save_package
)

from conftest import deployment, word_keyset


def test_package_roundtrip(any_deployment):
    package = any_deployment.package
    loaded = load_package(package.to_bytes())
    assert loaded == package
    assert loaded.model_id == package.model_id
    assert loaded.params == any_deployment.params
    assert loaded.key_id == package.key_id
    assert loaded.codec == any_deployment.codec
    assert loaded.protected.logits_power == any_deployment.protected.logits_power
    assert list(loaded.protected.ciphertexts()) == list(any_deployment.protected.ciphertexts())


def test_cleartext_layers_survive_packaging():
    package = deployment("last_layer").package
    loaded = load_package(package.to_bytes())
    first = loaded.protected.layers[0]
    assert not first.encrypted
    assert first.weights.tolist() == [[2, -1], [3, 2]]
    assert first.bias.tolist() == [2, -4]


def test_checksum_trailer():
    package = deployment("full_no_act").package
    data = package.to_bytes()
    assert package.checksum == crc32(data[:-4])
    assert len(package) == len(data)


def test_corrupted_package():
    data = bytearray(deployment("full_no_act").package.to_bytes())
    data[len(data) // 2] ^= 0x01
    with pytest.raises(ChecksumError):
        load_package(bytes(data))


def test_truncated_package():
    with pytest.raises(SerializationError):
        load_package(deployment("full_no_act").package.to_bytes()[:5])


def test_keys_of_other_parameters():
    setup = deployment("full_no_act")
    with pytest.raises(SerializationError):
        build_package(setup.protected, word_keyset().public_parts, setup.codec)


def test_key_id_matches_the_key_pair():
    setup = deployment("full_no_act")
    other = deployment("full_no_act", seed=1)
    assert setup.package.key_id != other.package.key_id
    assert setup.package.params_id == other.package.params_id


def test_no_weight_travels_as_a_plaintext(any_deployment):
    data = any_deployment.package.to_bytes()
    params = any_deployment.params
    layout = BatchLayout.from_params(params)
    for layer in any_deployment.qmodel.encrypted_layers:
        for value in set(np.ravel(layer.weights).tolist() + np.ravel(layer.bias).tolist()):
            assert serialize_plaintext(encode_scalar(value, layout), params) not in data


def test_higher_security_costs_bytes():
    assert ciphertext_size(security_preset(128, 1, plain_bits=20)) <= \
        ciphertext_size(security_preset(256, 1, plain_bits=20))


def test_save_is_atomic_and_readable():
    package = deployment("full_square2x").package
    dirname = tempfile.mkdtemp()
    path = os.path.join(dirname, "model.pkg")
    save_package(package, path)
    save_package(package, path)
    assert os.listdir(dirname) == ["model.pkg"]
    assert read_package(path) == package


class SecretMaterialTestCase(unittest.TestCase):
    def setUp(self):
        logassert.setup(self, 'fhe_edge.package')
        self.setup = deployment("full_no_act")

    def test_whole_keyset_is_refused(self):
        with self.assertRaises(SecretMaterialError):
            build_package(self.setup.protected, self.setup.keyset, self.setup.codec)

    def test_secret_key_is_refused(self):
        keyset = self.setup.keyset
        with self.assertRaises(SecretMaterialError):
            build_package(self.setup.protected, (keyset.secret_key, keyset.relin_keys),
                          self.setup.codec)

    def test_package_bytes_are_public(self):
        self.assertNotIn(SECRET_KEY_MARKER, self.setup.package.to_bytes())

    def test_loading_refuses_secret_bytes(self):
        body = self.setup.package.to_bytes()[:-4] + SECRET_KEY_MARKER
        data = body + struct.pack("<I", crc32(body))
        with self.assertRaises(SecretMaterialError):
            load_package(data)
        self.assertLoggedError("secret key material")
