"""
Ciphertext algebra
~~~~~~~~~~~~~~~~~~

Encryption places round(q*m/t) in the first polynomial, so the scaling
error never exceeds 1/2. Ciphertext products are computed exactly: both
operands are lifted to centered integers, convolved in an auxiliary NTT
basis wide enough to hold n*q^2 without wrapping, scaled by t/q with
rounding and brought back to R_q.

Every ciphertext also carries a key-free noise estimate, updated here by
each operation.

"""
import functools
import logging

import numpy as np

from fhe_edge.bfv.keys import Plaintext, evaluation_phase, make_rng
from fhe_edge.bfv.noise import estimator_for
from fhe_edge.constants import MAX_WORD_PRIME_BITS
from fhe_edge.exceptions import UsageError
from fhe_edge.modring import (
    RnsBasis, from_integers, generate_ntt_primes, ntt_forward, ntt_inverse, pointwise_mul,
    poly_add, poly_neg, poly_scalar_mul, poly_sub, sample_gaussian, sample_ternary,
    to_integers, zeros
)
from fhe_edge.utils import center, round_div

logger = logging.getLogger(__name__)


class Ciphertext:
    """Two or more polynomials mod q, plus the estimated log2 invariant noise."""
    __slots__ = ("polys", "params", "noise_bits")

    def __init__(self, polys, params, noise_bits):
        polys = tuple(polys)
        if len(polys) < 2:
            raise UsageError("A ciphertext holds at least two polynomials")
        if any(p.basis != params.basis for p in polys):
            raise UsageError("Ciphertext polynomials must live in the parameters' ring")
        self.polys = polys
        self.params = params
        self.noise_bits = float(noise_bits)

    @property
    def size(self):
        return len(self.polys)

    @property
    def params_id(self):
        return self.params.params_id

    @property
    def estimated_budget(self):
        return estimator_for(self.params).budget(self.noise_bits)

    def __eq__(self, other):
        return isinstance(other, Ciphertext) and self.params == other.params \
            and self.polys == other.polys

    def __repr__(self):
        return "<Ciphertext size={} params={}>".format(self.size, self.params_id)


def _check_params(*items):
    reference = items[0].params
    for item in items[1:]:
        if item.params != reference:
            raise UsageError("Operands were built for different parameters: %s and %s"
                             % (reference.params_id, item.params.params_id))
    return reference


def _check_plaintext(pt, params):
    if pt.poly.basis != params.plain_basis:
        raise UsageError("Plaintext modulus %d does not match parameters %s"
                         % (pt.modulus, params.params_id))


def scaled_plaintext(pt, params):
    """round(q * m / t) as an element of R_q."""
    q, t = params.q, params.t
    return from_integers((pt.coefficients * q + t // 2) // t, params.basis)


def _centered_plaintext(pt, params):
    return center(pt.coefficients, params.t)


def encrypt(pt, public_key, rng=None):
    """Fresh size-2 encryption of a plaintext under a public key."""
    params = public_key.params
    _check_plaintext(pt, params)
    rng = make_rng(rng)
    basis = params.basis
    u_hat = ntt_forward(sample_ternary(basis, rng))
    e1 = sample_gaussian(basis, params.noise_sigma, rng)
    e2 = sample_gaussian(basis, params.noise_sigma, rng)
    p0_hat, p1_hat = public_key.evaluation
    c0 = poly_add(poly_add(ntt_inverse(pointwise_mul(p0_hat, u_hat)), e1),
                  scaled_plaintext(pt, params))
    c1 = poly_add(ntt_inverse(pointwise_mul(p1_hat, u_hat)), e2)
    return Ciphertext((c0, c1), params, estimator_for(params).fresh())


def decrypt(ct, secret_key):
    """round(t * [c0 + c1*s + ...]_q / q) mod t, in exact integer arithmetic."""
    params = _check_params(ct, secret_key)
    q, t = params.q, params.t
    phase = to_integers(ntt_inverse(evaluation_phase(ct.polys, secret_key)))
    message = ((phase * t + q // 2) // q) % t
    return Plaintext(from_integers(message, params.plain_basis))


def _pad(polys, size):
    if len(polys) == size:
        return polys
    filler = zeros(polys[0].basis)
    return polys + (filler,) * (size - len(polys))


def add(a, b):
    params = _check_params(a, b)
    size = max(a.size, b.size)
    polys = [poly_add(x, y) for x, y in zip(_pad(a.polys, size), _pad(b.polys, size))]
    return Ciphertext(polys, params, estimator_for(params).add(a.noise_bits, b.noise_bits))


def negate(a):
    return Ciphertext([poly_neg(p) for p in a.polys], a.params, a.noise_bits)


def sub(a, b):
    return add(a, negate(b))


def add_plain(a, pt):
    params = a.params
    _check_plaintext(pt, params)
    c0 = poly_add(a.polys[0], scaled_plaintext(pt, params))
    return Ciphertext((c0,) + a.polys[1:], params,
                      estimator_for(params).add_plain(a.noise_bits))


def sub_plain(a, pt):
    params = a.params
    _check_plaintext(pt, params)
    c0 = poly_sub(a.polys[0], scaled_plaintext(pt, params))
    return Ciphertext((c0,) + a.polys[1:], params,
                      estimator_for(params).add_plain(a.noise_bits))


def multiply_plain(a, pt):
    """Product with a plaintext lifted to its centered representative, no relinearization."""
    params = a.params
    _check_plaintext(pt, params)
    lifted = _centered_plaintext(pt, params)
    norm = int(max(abs(v) for v in lifted))
    constant = pt.is_constant()
    if constant:
        scalar = int(lifted[0])
        polys = [poly_scalar_mul(p, scalar) for p in a.polys]
    else:
        plain_hat = ntt_forward(from_integers(lifted, params.basis))
        polys = [ntt_inverse(pointwise_mul(ntt_forward(p), plain_hat)) for p in a.polys]
    noise = estimator_for(params).multiply_plain(a.noise_bits, norm, constant)
    return Ciphertext(polys, params, noise)


@functools.lru_cache(maxsize=16)
def auxiliary_basis(params, max_terms=2):
    """NTT basis wide enough for exact centered products of R_q elements."""
    bits = 2 * params.log_q + params.n.bit_length() + max_terms.bit_length() + 3
    count = -(-bits // (MAX_WORD_PRIME_BITS - 1))
    return RnsBasis(generate_ntt_primes(MAX_WORD_PRIME_BITS, count, params.n))


def _lift(poly, aux):
    return ntt_forward(from_integers(to_integers(poly, centered=True), aux))


def tensor(a, b):
    """Degree-raising product, scaled by t/q and rounded; not relinearized."""
    params = _check_params(a, b)
    aux = auxiliary_basis(params, min(a.size, b.size))
    lifted_a = [_lift(p, aux) for p in a.polys]
    lifted_b = lifted_a if b is a else [_lift(p, aux) for p in b.polys]

    products = [None] * (a.size + b.size - 1)
    for i, x in enumerate(lifted_a):
        for j, y in enumerate(lifted_b):
            term = pointwise_mul(x, y)
            products[i + j] = term if products[i + j] is None else poly_add(products[i + j], term)

    q, t = params.q, params.t
    polys = []
    for product in products:
        exact = to_integers(ntt_inverse(product), centered=True)
        polys.append(from_integers(round_div(exact * t, q), params.basis))
    return Ciphertext(polys, params, estimator_for(params).multiply(a.noise_bits, b.noise_bits))


def relinearize(ct, relin_keys):
    """Size-3 ciphertext back to size 2 using base-2^bits digits of c2."""
    params = _check_params(ct, relin_keys)
    if ct.size == 2:
        return ct
    if ct.size != 3:
        raise UsageError("Only size-3 ciphertexts can be relinearized, got size %d" % ct.size)
    c0, c1, c2 = ct.polys
    bits = params.relin_decomposition_bits
    mask = (1 << bits) - 1
    c2_integers = to_integers(c2)

    acc0 = acc1 = None
    for i, (k0_hat, k1_hat) in enumerate(relin_keys.evaluation):
        digit = ((c2_integers >> (bits * i)) & mask).astype(np.int64)
        digit_hat = ntt_forward(from_integers(digit, params.basis))
        term0 = pointwise_mul(digit_hat, k0_hat)
        term1 = pointwise_mul(digit_hat, k1_hat)
        acc0 = term0 if acc0 is None else poly_add(acc0, term0)
        acc1 = term1 if acc1 is None else poly_add(acc1, term1)

    polys = (poly_add(c0, ntt_inverse(acc0)), poly_add(c1, ntt_inverse(acc1)))
    return Ciphertext(polys, params, estimator_for(params).relinearize(ct.noise_bits))


def multiply(a, b, relin_keys=None):
    """Ciphertext product, relinearized back to size 2."""
    if relin_keys is None:
        raise UsageError("Ciphertext multiplication needs relinearization keys")
    return relinearize(tensor(a, b), relin_keys)


def square(a, relin_keys=None):
    return multiply(a, a, relin_keys)
