import numpy as np
import pytest

from fhe_edge.bfv.evaluator import decrypt, encrypt
from fhe_edge.bfv.keys import Plaintext
from fhe_edge.bfv.params import toy_params
from fhe_edge.bfv.serialization import (
    SECRET_KEY_MARKER, Reader, ciphertext_size, contains_secret_material,
    deserialize_ciphertext, deserialize_params, key_fingerprint, read_plaintext,
    read_public_key, read_relin_keys, read_secret_key, serialize_ciphertext, serialize_params,
    serialize_plaintext, serialize_public_key, serialize_relin_keys, serialize_secret_key
)
from fhe_edge.exceptions import SerializationError, UsageError
from fhe_edge.modring import generate_ntt_primes

from conftest import word_keyset, word_params


def _ciphertext(keyset, values=(1, 2, 3)):
    params = keyset.params
    message = Plaintext.from_coefficients(list(values) + [0] * (params.n - len(values)), params)
    return encrypt(message, keyset.public_key, np.random.default_rng(9))


def test_params_roundtrip():
    params = word_params()
    assert deserialize_params(serialize_params(params)) == params


def test_wide_plain_modulus_roundtrip():
    # a plaintext modulus wider than 64 bits is written as a length-prefixed integer
    t = generate_ntt_primes(70, 1, 16)[0].value
    params = toy_params(16, 30, t, prime_count=4)
    restored = deserialize_params(serialize_params(params))
    assert restored.t == t
    assert restored.params_id == params.params_id


def test_keys_roundtrip():
    keyset = word_keyset()
    params = keyset.params
    assert read_public_key(Reader(serialize_public_key(keyset.public_key)), params) == \
        keyset.public_key
    assert read_relin_keys(Reader(serialize_relin_keys(keyset.relin_keys)), params) == \
        keyset.relin_keys
    assert read_secret_key(Reader(serialize_secret_key(keyset.secret_key)), params) == \
        keyset.secret_key


def test_ciphertext_roundtrip_keeps_noise_estimate():
    keyset = word_keyset()
    ct = _ciphertext(keyset)
    data = serialize_ciphertext(ct)
    assert len(data) == ciphertext_size(keyset.params)
    restored = deserialize_ciphertext(data, keyset.params)
    assert restored == ct
    assert restored.noise_bits == ct.noise_bits
    assert decrypt(restored, keyset.secret_key) == decrypt(ct, keyset.secret_key)


def test_serialization_is_deterministic():
    keyset = word_keyset()
    ct = _ciphertext(keyset)
    assert serialize_ciphertext(ct) == serialize_ciphertext(ct)


def test_plaintext_roundtrip():
    params = word_params()
    pt = Plaintext.from_coefficients(list(range(params.n)), params)
    assert read_plaintext(Reader(serialize_plaintext(pt, params)), params) == pt


def test_ciphertext_for_other_parameters():
    keyset = word_keyset()
    data = serialize_ciphertext(_ciphertext(keyset))
    with pytest.raises(UsageError):
        deserialize_ciphertext(data, word_params(t=193))


def test_truncated_ciphertext():
    keyset = word_keyset()
    data = serialize_ciphertext(_ciphertext(keyset))
    with pytest.raises(SerializationError):
        deserialize_ciphertext(data[:-5], keyset.params)


def test_unknown_version():
    data = bytearray(serialize_params(word_params()))
    data[3] = 99
    with pytest.raises(SerializationError):
        deserialize_params(bytes(data))


def test_wrong_tag():
    keyset = word_keyset()
    with pytest.raises(SerializationError):
        deserialize_ciphertext(serialize_public_key(keyset.public_key), keyset.params)


def test_secret_material_is_detectable():
    keyset = word_keyset()
    secret = serialize_secret_key(keyset.secret_key)
    assert secret.startswith(SECRET_KEY_MARKER)
    assert contains_secret_material(b"prefix" + secret)
    assert not contains_secret_material(serialize_public_key(keyset.public_key))
    assert not contains_secret_material(serialize_relin_keys(keyset.relin_keys))


def test_key_fingerprint():
    keyset = word_keyset()
    other = word_keyset(seed=8)
    assert key_fingerprint(keyset.public_key) == key_fingerprint(keyset.public_key)
    assert key_fingerprint(keyset.public_key) != key_fingerprint(other.public_key)
    assert len(key_fingerprint(keyset.public_key)) == 16
