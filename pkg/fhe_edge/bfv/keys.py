import logging
from collections import namedtuple

import numpy as np

from fhe_edge.exceptions import RangeError, UsageError
from fhe_edge.modring import (
    COEFFICIENT, from_integers, ntt_forward, pointwise_mul, poly_add, poly_mul, poly_neg,
    poly_scalar_mul, sample_gaussian, sample_ternary, sample_uniform, to_integers
)
from fhe_edge.utils import reify

logger = logging.getLogger(__name__)


def make_rng(rng=None):
    """Accept a numpy Generator, a seed or None (fresh entropy)."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


class Plaintext:
    """Polynomial over Z_t in coefficient form."""

    def __init__(self, poly):
        if poly.domain != COEFFICIENT:
            raise UsageError("Plaintexts are kept in coefficient form")
        if len(poly.basis) != 1:
            raise UsageError("Plaintexts live modulo a single prime")
        self.poly = poly

    @classmethod
    def from_coefficients(cls, coefficients, params):
        coefficients = np.asarray(coefficients, dtype=object)
        t = params.plain_modulus
        if any(c < 0 or c >= t for c in coefficients):
            raise RangeError("Plaintext coefficients must lie in [0, %d)" % t)
        return cls(from_integers(coefficients, params.plain_basis))

    @property
    def modulus(self):
        return self.poly.modulus

    @property
    def coefficients(self):
        return to_integers(self.poly)

    def is_constant(self):
        return not self.poly.residues[0, 1:].any()

    def __eq__(self, other):
        return isinstance(other, Plaintext) and self.poly == other.poly

    def __repr__(self):
        return "<Plaintext n={} t={}>".format(self.poly.n, self.modulus)


class SecretKey:
    def __init__(self, poly, params):
        self.poly = poly
        self.params = params

    @reify
    def evaluation(self):
        return ntt_forward(self.poly)

    def __eq__(self, other):
        return isinstance(other, SecretKey) and self.params == other.params \
            and self.poly == other.poly

    def __repr__(self):
        # Never print key material
        return "<SecretKey params={}>".format(self.params.params_id)


class PublicKey:
    """RLWE sample (-(a*s + e), a)."""

    def __init__(self, p0, p1, params):
        self.p0 = p0
        self.p1 = p1
        self.params = params

    @reify
    def evaluation(self):
        return ntt_forward(self.p0), ntt_forward(self.p1)

    def __eq__(self, other):
        return isinstance(other, PublicKey) and self.params == other.params \
            and self.p0 == other.p0 and self.p1 == other.p1

    def __repr__(self):
        return "<PublicKey params={}>".format(self.params.params_id)


class RelinKeys:
    """Key-switching pairs for s^2, one per base-2^bits digit of q."""

    def __init__(self, pairs, params):
        self.pairs = tuple(pairs)
        self.params = params
        if len(self.pairs) != params.relin_key_count:
            raise UsageError("Expected %d relinearization pairs, got %d"
                             % (params.relin_key_count, len(self.pairs)))

    @property
    def decomposition_bits(self):
        return self.params.relin_decomposition_bits

    @reify
    def evaluation(self):
        return tuple((ntt_forward(k0), ntt_forward(k1)) for k0, k1 in self.pairs)

    def __len__(self):
        return len(self.pairs)

    def __eq__(self, other):
        return isinstance(other, RelinKeys) and self.params == other.params \
            and self.pairs == other.pairs

    def __repr__(self):
        return "<RelinKeys params={} count={}>".format(self.params.params_id, len(self))


class KeySet(namedtuple("KeySet", ["params", "secret_key", "public_key", "relin_keys"])):
    __slots__ = ()

    @property
    def public_parts(self):
        """Everything that may leave the backend."""
        return self.public_key, self.relin_keys


def _rlwe_sample(basis, s, sigma, rng):
    a = sample_uniform(basis, rng)
    e = sample_gaussian(basis, sigma, rng)
    return poly_neg(poly_add(poly_mul(a, s), e)), a


def keygen(params, rng=None):
    """Secret, public and relinearization keys; deterministic for a fixed seed."""
    rng = make_rng(rng)
    basis = params.basis
    s = sample_ternary(basis, rng)
    secret_key = SecretKey(s, params)

    p0, p1 = _rlwe_sample(basis, s, params.noise_sigma, rng)
    public_key = PublicKey(p0, p1, params)

    s_squared = poly_mul(s, s)
    pairs = []
    base = 1 << params.relin_decomposition_bits
    for i in range(params.relin_key_count):
        k0, k1 = _rlwe_sample(basis, s, params.noise_sigma, rng)
        k0 = poly_add(k0, poly_scalar_mul(s_squared, base ** i))
        pairs.append((k0, k1))
    relin_keys = RelinKeys(pairs, params)

    logger.debug("Generated keys for %r (%d relinearization pairs)", params, len(pairs))
    return KeySet(params, secret_key, public_key, relin_keys)


def evaluation_phase(polys, secret_key):
    """c0 + c1*s + c2*s^2 + ... evaluated with Horner's rule in the NTT domain."""
    s_hat = secret_key.evaluation
    acc = ntt_forward(polys[-1])
    for poly in reversed(polys[:-1]):
        acc = poly_add(pointwise_mul(acc, s_hat), ntt_forward(poly))
    return acc
