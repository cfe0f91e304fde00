import unittest

import logassert
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.strategies import integers, lists, sampled_from

from fhe_edge.bfv.evaluator import (
    add, add_plain, decrypt, encrypt, multiply, multiply_plain, negate, relinearize, square,
    sub, sub_plain, tensor
)
from fhe_edge.bfv.keys import Plaintext, keygen
from fhe_edge.bfv.noise import (
    NoiseEstimator, measure_depth_capacity, noise_budget, validate_decryption
)
from fhe_edge.bfv.params import security_preset
from fhe_edge.constants import SECURITY_LEVELS
from fhe_edge.encode import BatchLayout, batch_decode, batch_encode, encode_scalar
from fhe_edge.exceptions import BudgetExhaustedError, RangeError, UsageError

from conftest import word_keyset, word_params

T = 97
N = 16

slot_values = lists(integers(0, T - 1), min_size=N, max_size=N)


@pytest.fixture
def keyset():
    return word_keyset()


def _encrypt_slots(values, keyset, seed=1):
    layout = BatchLayout.from_params(keyset.params)
    return encrypt(batch_encode(values, layout), keyset.public_key, np.random.default_rng(seed))


def _decrypt_slots(ct, keyset):
    return [int(v) for v in batch_decode(decrypt(ct, keyset.secret_key),
                                         BatchLayout.from_params(keyset.params))]


def test_keygen_is_deterministic():
    params = word_params()
    a = keygen(params, np.random.default_rng(11))
    b = keygen(params, np.random.default_rng(11))
    assert a.public_key == b.public_key
    assert a.relin_keys == b.relin_keys
    assert len(a.relin_keys) == params.relin_key_count


def test_secret_key_repr_hides_material(keyset):
    assert repr(keyset.secret_key) == "<SecretKey params=%s>" % keyset.params.params_id


@settings(max_examples=25, deadline=None)
@given(values=slot_values)
def test_encrypt_decrypt_roundtrip(values):
    keyset = word_keyset()
    message = Plaintext.from_coefficients(values, keyset.params)
    ct = encrypt(message, keyset.public_key, np.random.default_rng(0))
    assert ct.size == 2
    assert decrypt(ct, keyset.secret_key) == message


def test_encryption_is_randomized(keyset):
    message = encode_scalar(5, BatchLayout.from_params(keyset.params))
    first = encrypt(message, keyset.public_key, np.random.default_rng(1))
    second = encrypt(message, keyset.public_key, np.random.default_rng(2))
    assert first != second
    assert decrypt(first, keyset.secret_key) == decrypt(second, keyset.secret_key)


def test_encrypt_zero(keyset):
    zero = Plaintext.from_coefficients([0] * N, keyset.params)
    assert decrypt(encrypt(zero, keyset.public_key, np.random.default_rng(4)),
                   keyset.secret_key) == zero


def test_long_additive_chain(keyset):
    layout = BatchLayout.from_params(keyset.params)
    one = encrypt(encode_scalar(1, layout), keyset.public_key, np.random.default_rng(6))
    total = one
    for _ in range(999):
        total = add(total, one)
    assert decrypt(total, keyset.secret_key).coefficients[0] == 1000 % T
    assert noise_budget(total, keyset.secret_key) > 0


@settings(max_examples=15, deadline=None)
@given(a=slot_values, b=slot_values)
def test_homomorphic_add_and_sub(a, b):
    keyset = word_keyset()
    ca, cb = _encrypt_slots(a, keyset, 1), _encrypt_slots(b, keyset, 2)
    assert _decrypt_slots(add(ca, cb), keyset) == [(x + y) % T for x, y in zip(a, b)]
    assert _decrypt_slots(sub(ca, cb), keyset) == [(x - y) % T for x, y in zip(a, b)]
    assert _decrypt_slots(negate(ca), keyset) == [-x % T for x in a]


@settings(max_examples=15, deadline=None)
@given(a=slot_values, b=slot_values)
def test_homomorphic_multiply(a, b):
    keyset = word_keyset()
    ca, cb = _encrypt_slots(a, keyset, 1), _encrypt_slots(b, keyset, 2)
    product = multiply(ca, cb, keyset.relin_keys)
    assert product.size == 2
    assert _decrypt_slots(product, keyset) == [x * y % T for x, y in zip(a, b)]


@settings(max_examples=15, deadline=None)
@given(a=slot_values, b=slot_values, scalar=integers(0, T - 1))
def test_plaintext_operations(a, b, scalar):
    keyset = word_keyset()
    layout = BatchLayout.from_params(keyset.params)
    ca = _encrypt_slots(a, keyset)
    assert _decrypt_slots(multiply_plain(ca, batch_encode(b, layout)), keyset) == \
        [x * y % T for x, y in zip(a, b)]
    assert _decrypt_slots(multiply_plain(ca, encode_scalar(scalar, layout)), keyset) == \
        [x * scalar % T for x in a]
    assert _decrypt_slots(add_plain(ca, batch_encode(b, layout)), keyset) == \
        [(x + y) % T for x, y in zip(a, b)]
    assert _decrypt_slots(sub_plain(ca, batch_encode(b, layout)), keyset) == \
        [(x - y) % T for x, y in zip(a, b)]


@pytest.mark.parametrize("level", SECURITY_LEVELS)
def test_security_presets_compute_exactly(level):
    params = security_preset(level, 1, plain_bits=20)
    rng = np.random.default_rng(level)
    keyset = keygen(params, rng)
    layout = BatchLayout.from_params(params)
    t = params.t

    def slots(ct):
        return [int(v) for v in batch_decode(decrypt(ct, keyset.secret_key), layout)]

    for _ in range(2):
        a, b = rng.integers(0, t, size=(2, layout.slot_count)).tolist()
        ca = encrypt(batch_encode(a, layout), keyset.public_key, rng)
        cb = encrypt(batch_encode(b, layout), keyset.public_key, rng)
        assert slots(ca) == a
        assert slots(add(ca, cb)) == [(x + y) % t for x, y in zip(a, b)]
        assert slots(multiply(ca, cb, keyset.relin_keys)) == [x * y % t for x, y in zip(a, b)]


def test_multiply_plain_is_cheaper_than_multiply(keyset):
    layout = BatchLayout.from_params(keyset.params)
    rng = np.random.default_rng(21)
    cheaper = 0
    for trial in range(20):
        a, b = rng.integers(0, T, size=(2, N)).tolist()
        ca, cb = _encrypt_slots(a, keyset, 2 * trial + 1), _encrypt_slots(b, keyset, 2 * trial + 2)
        plain = noise_budget(multiply_plain(ca, batch_encode(b, layout)), keyset.secret_key)
        cipher = noise_budget(multiply(ca, cb, keyset.relin_keys), keyset.secret_key)
        cheaper += plain > cipher
    assert cheaper >= 19


@settings(max_examples=20, deadline=None)
@given(values=lists(integers(1, T - 1), min_size=N, max_size=N),
       chain=lists(sampled_from(["add", "multiply_plain", "multiply"]), min_size=1, max_size=4),
       scalar=integers(1, T - 1))
def test_budget_never_grows_along_a_chain(values, chain, scalar):
    keyset = word_keyset()
    layout = BatchLayout.from_params(keyset.params)
    ct = _encrypt_slots(values, keyset)
    budget = noise_budget(ct, keyset.secret_key)
    for step, op in enumerate(chain):
        if op == "add":
            ct = add(ct, ct)
        elif op == "multiply_plain":
            ct = multiply_plain(ct, encode_scalar(scalar, layout))
        else:
            ct = multiply(ct, _encrypt_slots(values, keyset, step + 2), keyset.relin_keys)
        remaining = noise_budget(ct, keyset.secret_key)
        assert remaining <= budget
        if remaining == 0:
            break
        budget = remaining


def test_tensor_then_relinearize(keyset):
    a = list(range(N))
    ct = _encrypt_slots(a, keyset)
    raised = tensor(ct, ct)
    assert raised.size == 3
    assert _decrypt_slots(raised, keyset) == [x * x % T for x in a]
    relinearized = relinearize(raised, keyset.relin_keys)
    assert relinearized.size == 2
    assert _decrypt_slots(relinearized, keyset) == [x * x % T for x in a]
    assert relinearize(relinearized, keyset.relin_keys) is relinearized


def test_multiply_needs_relin_keys(keyset):
    ct = _encrypt_slots([1] * N, keyset)
    with pytest.raises(UsageError):
        multiply(ct, ct)


def test_operands_of_different_parameters(keyset):
    other = word_keyset(t=193)
    with pytest.raises(UsageError):
        add(_encrypt_slots([1] * N, keyset), _encrypt_slots([1] * N, other))
    with pytest.raises(UsageError):
        decrypt(_encrypt_slots([1] * N, keyset), other.secret_key)


def test_plaintext_out_of_range(keyset):
    with pytest.raises(RangeError):
        Plaintext.from_coefficients([T] + [0] * (N - 1), keyset.params)


def test_fresh_budget_is_positive_and_estimate_is_pessimistic(keyset):
    ct = _encrypt_slots(list(range(N)), keyset)
    measured = noise_budget(ct, keyset.secret_key)
    assert measured > 0
    assert ct.estimated_budget <= measured


def test_budget_decreases_with_depth(keyset):
    ct = _encrypt_slots(list(range(N)), keyset)
    squared = square(ct, keyset.relin_keys)
    assert noise_budget(squared, keyset.secret_key) < noise_budget(ct, keyset.secret_key)
    assert squared.estimated_budget < ct.estimated_budget


def test_measured_depth_capacity(keyset):
    assert measure_depth_capacity(keyset, np.random.default_rng(5)) >= 1


def test_estimator_operations():
    estimator = NoiseEstimator(word_params())
    fresh = estimator.fresh()
    assert estimator.add(fresh, fresh) == pytest.approx(fresh + 1)
    assert estimator.negate(fresh) == fresh
    assert estimator.multiply_plain(fresh, 4) == pytest.approx(fresh + 2)
    assert estimator.multiply_plain(fresh, 0) == float("-inf")
    assert estimator.multiply(fresh, fresh) > fresh
    assert estimator.budget(0.5) == 0
    assert estimator.budget(-10.0) == 9


class NoiseExhaustionTestCase(unittest.TestCase):
    def setUp(self):
        logassert.setup(self, 'fhe_edge.bfv.noise')
        self.keyset = word_keyset()

    def test_validate_fresh_ciphertext(self):
        ct = _encrypt_slots([3] * N, self.keyset)
        message = batch_encode([3] * N, BatchLayout.from_params(self.keyset.params))
        self.assertGreater(validate_decryption(ct, self.keyset.secret_key, message), 0)

    def test_validate_wrong_expectation(self):
        ct = _encrypt_slots([3] * N, self.keyset)
        wrong = batch_encode([4] * N, BatchLayout.from_params(self.keyset.params))
        with self.assertRaises(BudgetExhaustedError):
            validate_decryption(ct, self.keyset.secret_key, wrong)

    def test_exhausted_ciphertext(self):
        ct = _encrypt_slots(list(range(N)), self.keyset)
        for _ in range(12):
            if noise_budget(ct, self.keyset.secret_key) == 0:
                break
            ct = square(ct, self.keyset.relin_keys)
        self.assertEqual(noise_budget(ct, self.keyset.secret_key), 0)
        with self.assertRaises(BudgetExhaustedError):
            validate_decryption(ct, self.keyset.secret_key)
        self.assertLoggedError("Noise budget exhausted", "size 2")


def test_benchmark_multiply(benchmark):
    keyset = word_keyset(n=1024, prime_count=3, t=12289)
    a = _encrypt_slots(list(range(1024)), keyset)

    product = benchmark(multiply, a, a, keyset.relin_keys)

    assert product.size == 2
    assert noise_budget(product, keyset.secret_key) > 0
