"""
Negacyclic polynomial rings
~~~~~~~~~~~~~~~~~~~~~~~~~~~

Exact arithmetic in R_q = Z_q[x]/(x^n + 1). A modulus q is a product of
distinct NTT-friendly primes and every polynomial is held in residue form,
one row of ``n`` residues per prime.

Rows are ``int64`` while every prime is below 2^31, so a product of two
residues never leaves the word. Larger primes (a wide plaintext modulus, for
instance) fall back to numpy ``object`` rows of Python integers: slower, but
the same code path.

No constant-time guarantees are made anywhere in this module.

"""
import functools
import logging
from collections import namedtuple
from math import prod

import numpy as np
from sympy import isprime

from .exceptions import ParameterError, UsageError
from .utils import as_int_array, bit_reverse_indices, is_power_of_two, njit, reify

logger = logging.getLogger(__name__)

COEFFICIENT = "coefficient"
EVALUATION = "evaluation"

WORD_LIMIT = 1 << 31


class PrimeModulus(namedtuple("PrimeModulus", ["value", "degree_hint"])):
    __slots__ = ()

    @classmethod
    def create(cls, value, degree_hint):
        """Validated constructor: value must be an odd prime below 2^62, 1 mod 2n."""
        value = int(value)
        if value >= 1 << 62 or value < 3 or not isprime(value):
            raise ParameterError("%d is not an odd prime below 2^62" % value)
        if value % (2 * degree_hint) != 1:
            raise ParameterError(
                "%d is not 1 mod %d, no primitive %d-th root of unity exists"
                % (value, 2 * degree_hint, 2 * degree_hint)
            )
        return cls(value, degree_hint)


def generate_ntt_primes(bits, count, n, exclude=()):
    """Largest `count` primes below 2^bits that are 1 mod 2n.

    The search is deterministic, so the same arguments always give the
    same moduli.

    """
    step = 2 * n
    candidate = ((1 << bits) - 1) // step * step + 1
    floor = 1 << (bits - 1)
    primes = []
    while len(primes) < count:
        if candidate < floor:
            raise ParameterError(
                "Not enough %d-bit primes congruent to 1 mod %d" % (bits, step))
        if candidate not in exclude and isprime(candidate):
            primes.append(PrimeModulus(candidate, n))
        candidate -= step
    return primes


class RnsBasis:
    """Ordered set of distinct primes sharing one ring degree."""

    def __init__(self, primes):
        primes = tuple(primes)
        if not primes:
            raise ParameterError("A basis needs at least one prime")
        n = primes[0].degree_hint
        if not is_power_of_two(n):
            raise ParameterError("Ring degree %d is not a power of two" % n)
        if any(p.degree_hint != n for p in primes):
            raise ParameterError("All primes of a basis must share the ring degree")
        if len({p.value for p in primes}) != len(primes):
            raise ParameterError("Basis primes must be distinct")
        self.primes = primes
        self.n = n
        self.values = tuple(p.value for p in primes)
        self.product = prod(self.values)
        self.is_word_sized = all(v < WORD_LIMIT for v in self.values)
        self.dtype = np.int64 if self.is_word_sized else object

    @classmethod
    def from_values(cls, values, n):
        return cls(PrimeModulus.create(v, n) for v in values)

    def __len__(self):
        return len(self.primes)

    def __iter__(self):
        return iter(self.primes)

    def __eq__(self, other):
        return isinstance(other, RnsBasis) and self.values == other.values and self.n == other.n

    def __hash__(self):
        return hash((self.n, self.values))

    def __repr__(self):
        return "<RnsBasis n={} primes={}>".format(self.n, list(self.values))

    @property
    def bit_length(self):
        return self.product.bit_length()

    def column(self):
        """Moduli shaped (k, 1) for broadcasting against residue rows."""
        column = np.empty((len(self), 1), dtype=self.dtype)
        column[:, 0] = self.values
        return column

    @reify
    def crt_factors(self):
        """(Q/q_i) * ((Q/q_i)^-1 mod q_i) for every prime, as Python integers."""
        factors = []
        for value in self.values:
            partial = self.product // value
            factors.append(partial * pow(partial, -1, value))
        return factors


class NttTables(namedtuple("NttTables", ["roots", "psi_rev", "psi_inv_rev", "n_inverse"])):
    """Per-prime twiddle factors for the negacyclic transform.

    ``roots`` are primitive 2n-th roots of unity, ``psi_rev[i]`` holds
    root^bitrev(i) and ``psi_inv_rev`` the inverse powers.

    """
    __slots__ = ()


def _primitive_root_2n(q, n):
    exponent = (q - 1) // (2 * n)
    for x in range(2, q):
        root = pow(x, exponent, q)
        if pow(root, n, q) == q - 1:
            return root
    raise ParameterError("No primitive %d-th root of unity modulo %d" % (2 * n, q))


@functools.lru_cache(maxsize=64)
def ntt_tables(basis):
    n = basis.n
    rev = bit_reverse_indices(n)
    shape = (len(basis), n)
    psi_rev = np.empty(shape, dtype=basis.dtype)
    psi_inv_rev = np.empty(shape, dtype=basis.dtype)
    roots = []
    for row, q in enumerate(basis.values):
        if (q - 1) % (2 * n):
            raise ParameterError("Modulus %d has no valid %d-th root of unity" % (q, 2 * n))
        root = _primitive_root_2n(q, n)
        root_inv = pow(root, -1, q)
        powers, inv_powers = [1] * n, [1] * n
        for i in range(1, n):
            powers[i] = powers[i - 1] * root % q
            inv_powers[i] = inv_powers[i - 1] * root_inv % q
        psi_rev[row] = [powers[j] for j in rev]
        psi_inv_rev[row] = [inv_powers[j] for j in rev]
        roots.append(root)
    n_inverse = np.empty((len(basis), 1), dtype=basis.dtype)
    n_inverse[:, 0] = [pow(n, -1, q) for q in basis.values]
    logger.debug("Built NTT tables for %r", basis)
    return NttTables(tuple(roots), psi_rev, psi_inv_rev, n_inverse)


class RingPoly:
    """Element of R_q in residue form.

    ``residues`` has shape (k, n), one row per prime of ``basis``;
    ``domain`` tells whether rows hold coefficients or NTT evaluations.
    Instances are treated as immutable.

    """
    __slots__ = ("residues", "basis", "domain")

    def __init__(self, residues, basis, domain=COEFFICIENT):
        if residues.shape != (len(basis), basis.n):
            raise ParameterError(
                "Residues of shape %s do not match %r" % (residues.shape, basis))
        if domain not in (COEFFICIENT, EVALUATION):
            raise ParameterError("Unknown domain %r" % domain)
        residues.flags.writeable = False
        self.residues = residues
        self.basis = basis
        self.domain = domain

    @property
    def n(self):
        return self.basis.n

    @property
    def modulus(self):
        return self.basis.product

    def __eq__(self, other):
        return (isinstance(other, RingPoly) and self.basis == other.basis
                and self.domain == other.domain
                and np.array_equal(self.residues, other.residues))

    def __repr__(self):
        return "<RingPoly n={} primes={} {}>".format(self.n, len(self.basis), self.domain)

    @property
    def coefficients(self):
        """Coefficients in [0, q) as Python integers."""
        return to_integers(self)


def zeros(basis, domain=COEFFICIENT):
    return RingPoly(np.zeros((len(basis), basis.n), dtype=basis.dtype), basis, domain)


def from_integers(values, basis):
    """Reduce integer coefficients (any sign, any size) into residue form."""
    if len(values) != basis.n:
        raise ParameterError("Expected %d coefficients, got %d" % (basis.n, len(values)))
    values = np.asarray(values)
    residues = np.empty((len(basis), basis.n), dtype=basis.dtype)
    if values.dtype != object and basis.is_word_sized:
        values = values.astype(np.int64)
        for row, q in enumerate(basis.values):
            residues[row] = values % q
    else:
        values = as_int_array(values) if values.dtype != object else values
        for row, q in enumerate(basis.values):
            residues[row] = values % q
    return RingPoly(residues, basis)


def to_integers(p, centered=False):
    """Chinese-remainder reconstruction of the coefficients as Python integers."""
    p = ntt_inverse(p) if p.domain == EVALUATION else p
    basis = p.basis
    if len(basis) == 1:
        values = as_int_array(p.residues[0])
    else:
        values = np.zeros(basis.n, dtype=object)
        for row, factor in enumerate(basis.crt_factors):
            values = values + as_int_array(p.residues[row]) * factor
        values = values % basis.product
    if centered:
        half = basis.product // 2
        values = np.where(values > half, values - basis.product, values)
    return values


def _check_same_ring(a, b):
    if a.basis != b.basis:
        raise UsageError("Polynomials live in different rings: %r and %r" % (a.basis, b.basis))
    if a.domain != b.domain:
        raise UsageError("Polynomials are in different domains")


def ntt_forward(p):
    """Negacyclic NTT, coefficient domain to evaluation domain."""
    if p.domain != COEFFICIENT:
        raise UsageError("ntt_forward expects a coefficient-domain polynomial")
    tables = ntt_tables(p.basis)
    k, n = p.residues.shape
    q = p.basis.column()[:, :, None]
    a = p.residues
    m, t = 1, n
    while m < n:
        t //= 2
        blocks = a.reshape(k, m, 2, t)
        u = blocks[:, :, 0, :]
        v = blocks[:, :, 1, :] * tables.psi_rev[:, m:2 * m, None] % q
        a = np.stack(((u + v) % q, (u - v) % q), axis=2).reshape(k, n)
        m *= 2
    return RingPoly(np.ascontiguousarray(a), p.basis, EVALUATION)


def ntt_inverse(p):
    """Inverse of :func:`ntt_forward`."""
    if p.domain != EVALUATION:
        raise UsageError("ntt_inverse expects an evaluation-domain polynomial")
    tables = ntt_tables(p.basis)
    k, n = p.residues.shape
    q = p.basis.column()[:, :, None]
    a = p.residues
    t, m = 1, n
    while m > 1:
        h = m // 2
        blocks = a.reshape(k, h, 2, t)
        u = blocks[:, :, 0, :]
        v = blocks[:, :, 1, :]
        twiddle = tables.psi_inv_rev[:, h:2 * h, None]
        a = np.stack(((u + v) % q, (u - v) % q * twiddle % q), axis=2).reshape(k, n)
        t *= 2
        m = h
    a = a * tables.n_inverse % p.basis.column()
    return RingPoly(np.ascontiguousarray(a), p.basis, COEFFICIENT)


def poly_add(a, b):
    _check_same_ring(a, b)
    return RingPoly((a.residues + b.residues) % a.basis.column(), a.basis, a.domain)


def poly_sub(a, b):
    _check_same_ring(a, b)
    return RingPoly((a.residues - b.residues) % a.basis.column(), a.basis, a.domain)


def poly_neg(a):
    return RingPoly((-a.residues) % a.basis.column(), a.basis, a.domain)


def poly_scalar_mul(a, scalar):
    """Multiply by an integer scalar, reduced per prime (works in both domains)."""
    factors = np.empty((len(a.basis), 1), dtype=a.basis.dtype)
    factors[:, 0] = [int(scalar) % q for q in a.basis.values]
    return RingPoly(a.residues * factors % a.basis.column(), a.basis, a.domain)


def pointwise_mul(a, b):
    """Slot-wise product of two evaluation-domain polynomials."""
    _check_same_ring(a, b)
    if a.domain != EVALUATION:
        raise UsageError("pointwise_mul expects evaluation-domain polynomials")
    return RingPoly(a.residues * b.residues % a.basis.column(), a.basis, EVALUATION)


def poly_mul(a, b):
    """a * b mod (x^n + 1, q) through the NTT.

    The result is returned in the domain the operands came in.

    """
    if a.basis != b.basis:
        raise UsageError("Polynomials live in different rings: %r and %r" % (a.basis, b.basis))
    if a.domain == EVALUATION and b.domain == EVALUATION:
        return pointwise_mul(a, b)
    a_hat = a if a.domain == EVALUATION else ntt_forward(a)
    b_hat = b if b.domain == EVALUATION else ntt_forward(b)
    return ntt_inverse(pointwise_mul(a_hat, b_hat))


@njit
def _schoolbook_row(a, b, q):
    n = a.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        for j in range(n):
            k = i + j
            product = a[i] * b[j] % q
            if k >= n:
                out[k - n] = (out[k - n] - product) % q
            else:
                out[k] = (out[k] + product) % q
    return out


def _schoolbook_row_wide(a, b, q):
    n = len(a)
    out = [0] * n
    for i in range(n):
        for j in range(n):
            k = i + j
            if k >= n:
                out[k - n] -= int(a[i]) * int(b[j])
            else:
                out[k] += int(a[i]) * int(b[j])
    return [c % q for c in out]


def schoolbook_mul(a, b):
    """O(n^2) negacyclic convolution, the reference for :func:`poly_mul`."""
    _check_same_ring(a, b)
    if a.domain != COEFFICIENT:
        raise UsageError("schoolbook_mul expects coefficient-domain polynomials")
    residues = np.empty_like(a.residues)
    for row, q in enumerate(a.basis.values):
        if a.basis.is_word_sized:
            residues[row] = _schoolbook_row(a.residues[row], b.residues[row], q)
        else:
            residues[row] = _schoolbook_row_wide(a.residues[row], b.residues[row], q)
    return RingPoly(residues, a.basis)


def sample_uniform(basis, rng):
    """Uniform element of R_q (independent uniform residues are uniform mod q by CRT)."""
    residues = np.empty((len(basis), basis.n), dtype=basis.dtype)
    for row, q in enumerate(basis.values):
        if basis.is_word_sized:
            residues[row] = rng.integers(0, q, size=basis.n, dtype=np.int64)
        else:
            # 64 spare bits keep the modular bias negligible
            width = (q.bit_length() + 64 + 7) // 8
            residues[row] = [int.from_bytes(rng.bytes(width), "little") % q
                             for _ in range(basis.n)]
    return RingPoly(residues, basis)


def ternary_coefficients(n, rng):
    return rng.integers(-1, 2, size=n, dtype=np.int64)


def gaussian_coefficients(n, sigma, rng):
    """Rounded Box-Muller samples with standard deviation sigma."""
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    u1 = 1.0 - rng.random(n)
    u2 = rng.random(n)
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2) * sigma
    return (np.sign(z) * np.floor(np.abs(z) + 0.5)).astype(np.int64)


def sample_ternary(basis, rng):
    return from_integers(ternary_coefficients(basis.n, rng), basis)


def sample_gaussian(basis, sigma, rng):
    return from_integers(gaussian_coefficients(basis.n, sigma, rng), basis)
