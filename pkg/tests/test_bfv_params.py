import unittest

import logassert
import numpy as np
import pytest

from fhe_edge.bfv.evaluator import encrypt
from fhe_edge.bfv.keys import Plaintext, keygen
from fhe_edge.bfv.noise import NoiseEstimator, measure_depth_capacity, noise_budget
from fhe_edge.bfv.params import (
    EncryptionParams, coefficient_modulus, security_preset, toy_params, toy_preset
)
from fhe_edge.constants import HE_STANDARD_MAX_LOG_Q
from fhe_edge.exceptions import DepthUnreachableError, ParameterError
from fhe_edge.modring import generate_ntt_primes


def test_plain_modulus_must_allow_batching():
    primes = coefficient_modulus(4096, 109)
    # 65520 is not a multiple of 8192
    with pytest.raises(ParameterError):
        EncryptionParams(4096, primes, 65521)


def test_plain_modulus_must_be_prime():
    with pytest.raises(ParameterError):
        EncryptionParams(16, generate_ntt_primes(30, 1, 16), 33)


def test_plain_modulus_below_coefficient_modulus():
    primes = generate_ntt_primes(12, 1, 16)
    with pytest.raises(ParameterError):
        EncryptionParams(16, primes, primes[0].value, security_level=None)


def test_coefficient_modulus_within_security_bound():
    primes = generate_ntt_primes(30, 2, 1024)
    with pytest.raises(ParameterError):
        EncryptionParams(1024, primes, 12289, security_level=128)


def test_unknown_security_level():
    with pytest.raises(ParameterError):
        EncryptionParams(4096, coefficient_modulus(4096, 109), 40961, security_level=512)


def test_params_id_is_stable_and_discriminating():
    a = toy_params(16, 30, 97, prime_count=2)
    b = toy_params(16, 30, 97, prime_count=2)
    c = toy_params(16, 30, 193, prime_count=2)
    assert a == b
    assert a.params_id == b.params_id
    assert a != c
    assert len({a, b, c}) == 2


def test_relin_key_count_covers_modulus():
    params = toy_params(16, 30, 97, prime_count=2)
    assert params.relin_key_count * params.relin_decomposition_bits >= params.log_q


@pytest.mark.parametrize("level", [128, 192, 256])
def test_presets_respect_the_standard(level):
    params = security_preset(level, 1, plain_bits=20)
    assert params.security_level == level
    assert params.log_q <= HE_STANDARD_MAX_LOG_Q[level][params.n]
    assert params.t % (2 * params.n) == 1
    assert NoiseEstimator(params).depth_capacity() >= 1


@pytest.mark.parametrize("level", [128, 192, 256])
def test_measured_capacity_meets_the_estimate(level):
    params = security_preset(level, 1, plain_bits=20)
    keyset = keygen(params, np.random.default_rng(level))
    assert measure_depth_capacity(keyset, np.random.default_rng(1)) >= \
        NoiseEstimator(params).depth_capacity()


def test_higher_levels_are_more_conservative():
    p128 = security_preset(128, 2, plain_bits=20)
    p256 = security_preset(256, 2, plain_bits=20)
    assert p256.n > p128.n or (p256.n == p128.n and p256.log_q <= p128.log_q)


def test_preset_128_sustains_fresh_ciphertexts():
    params = security_preset(128, 1, plain_bits=20)
    keyset = keygen(params, np.random.default_rng(3))
    message = Plaintext.from_coefficients([1, 2, 3] + [0] * (params.n - 3), params)
    ct = encrypt(message, keyset.public_key, np.random.default_rng(4))
    assert noise_budget(ct, keyset.secret_key) > 0


def test_unreachable_depth():
    with pytest.raises(DepthUnreachableError):
        security_preset(256, 60)


def test_toy_preset_grows_until_depth_fits():
    shallow = toy_preset(1, plain_bits=16)
    deep = toy_preset(3, plain_bits=16)
    assert shallow.security_level is None
    assert deep.log_q >= shallow.log_q
    assert NoiseEstimator(deep).depth_capacity() >= 3


class ToyParametersTestCase(unittest.TestCase):
    def setUp(self):
        logassert.setup(self, 'fhe_edge.bfv.params')

    def test_toy_parameters_warn(self):
        params = toy_params(16, 30, 97)
        self.assertIsNone(params.security_level)
        self.assertLoggedWarning("without a security level", "n=16")

    def test_preset_parameters_do_not_warn(self):
        security_preset(128, 1, plain_bits=20)
        self.assertNotLoggedWarning("without a security level")
