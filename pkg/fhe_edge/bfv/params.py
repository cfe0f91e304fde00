import hashlib
import logging
import struct

from sympy import isprime

from fhe_edge.constants import (
    HE_STANDARD_MAX_LOG_Q, MAX_WORD_PRIME_BITS, NOISE_SIGMA, RELIN_DECOMPOSITION_BITS,
    SECURITY_LEVELS
)
from fhe_edge.exceptions import DepthUnreachableError, ParameterError
from fhe_edge.modring import PrimeModulus, RnsBasis, generate_ntt_primes
from fhe_edge.utils import is_power_of_two, reify

logger = logging.getLogger(__name__)

DEFAULT_PLAIN_BITS = 40


class EncryptionParams:
    """Ring degree, coefficient modulus chain, plaintext modulus and security level.

    Instances are immutable and compare equal when their fingerprints match.
    ``security_level=None`` builds toy parameters that are not checked
    against the security table; a warning is logged.

    """

    def __init__(self, poly_degree, coeff_modulus, plain_modulus, security_level=128,
                 noise_sigma=NOISE_SIGMA, relin_decomposition_bits=RELIN_DECOMPOSITION_BITS):
        if not is_power_of_two(poly_degree) or poly_degree < 2:
            raise ParameterError("poly_degree must be a power of two, got %r" % poly_degree)
        self.poly_degree = int(poly_degree)
        self.coeff_modulus = tuple(
            PrimeModulus.create(p.value if isinstance(p, PrimeModulus) else p, poly_degree)
            for p in coeff_modulus
        )
        self.plain_modulus = int(plain_modulus)
        self.security_level = security_level
        self.noise_sigma = float(noise_sigma)
        self.relin_decomposition_bits = int(relin_decomposition_bits)
        self._validate()

    def _validate(self):
        n, t = self.poly_degree, self.plain_modulus
        if not isprime(t):
            raise ParameterError("Plaintext modulus %d is not prime" % t)
        if t % (2 * n) != 1:
            raise ParameterError(
                "Plaintext modulus %d is not congruent to 1 mod %d, batching is impossible"
                % (t, 2 * n))
        if t >= self.q:
            raise ParameterError("Plaintext modulus must be smaller than the coefficient modulus")
        if self.noise_sigma <= 0:
            raise ParameterError("noise_sigma must be positive")
        if not 1 <= self.relin_decomposition_bits <= 62:
            raise ParameterError("relin_decomposition_bits out of range")

        if self.security_level is None:
            logger.warning("Using parameters without a security level (n=%d, log q=%d)",
                           n, self.log_q)
            return
        if self.security_level not in SECURITY_LEVELS:
            raise ParameterError("Unsupported security level %r, choose one of %s"
                                 % (self.security_level, SECURITY_LEVELS))
        bound = HE_STANDARD_MAX_LOG_Q[self.security_level].get(n)
        if bound is None:
            raise ParameterError("No %d-bit security bound tabulated for n=%d"
                                 % (self.security_level, n))
        if self.log_q > bound:
            raise ParameterError("log2(q)=%d exceeds the %d-bit bound %d for n=%d"
                                 % (self.log_q, self.security_level, bound, n))

    @reify
    def basis(self):
        return RnsBasis(self.coeff_modulus)

    @reify
    def plain_basis(self):
        return RnsBasis([PrimeModulus(self.plain_modulus, self.poly_degree)])

    @property
    def n(self):
        return self.poly_degree

    @property
    def t(self):
        return self.plain_modulus

    @reify
    def q(self):
        return self.basis.product

    @property
    def log_q(self):
        return self.q.bit_length()

    @property
    def relin_key_count(self):
        return -(-self.log_q // self.relin_decomposition_bits)

    @reify
    def params_id(self):
        """Stable fingerprint of every field, shared by all derived objects."""
        digest = hashlib.sha256()
        digest.update(struct.pack("<IH", self.poly_degree, len(self.coeff_modulus)))
        for prime in self.coeff_modulus:
            digest.update(struct.pack("<Q", prime.value))
        digest.update(str(self.plain_modulus).encode("ascii"))
        digest.update(struct.pack("<HdB", self.security_level or 0, self.noise_sigma,
                                  self.relin_decomposition_bits))
        return digest.hexdigest()[:16]

    def __eq__(self, other):
        return isinstance(other, EncryptionParams) and self.params_id == other.params_id

    def __hash__(self):
        return hash(self.params_id)

    def __repr__(self):
        return "<EncryptionParams n={} log_q={} t={} level={} id={}>".format(
            self.poly_degree, self.log_q, self.plain_modulus, self.security_level,
            self.params_id)


def coefficient_modulus(n, max_bits):
    """Word-size NTT primes for ring degree n whose product stays within max_bits."""
    count = -(-max_bits // MAX_WORD_PRIME_BITS)
    return generate_ntt_primes(max_bits // count, count, n)


def plain_modulus_for(n, plain_bits):
    return generate_ntt_primes(plain_bits, 1, n)[0].value


def security_preset(level, depth_hint, plain_bits=DEFAULT_PLAIN_BITS, margin_bits=0):
    """Smallest standard-compliant parameters expected to sustain `depth_hint` multiplications.

    For each tabulated ring degree the coefficient modulus fills the maximum
    log q allowed at `level`; depth capacity comes from the noise estimator.
    The estimate is a worst case, never above what `measure_depth_capacity`
    finds on real ciphertexts, so a preset may be one ring degree larger
    than strictly needed.

    """
    from fhe_edge.bfv.noise import NoiseEstimator

    if level not in SECURITY_LEVELS:
        raise ParameterError("Unsupported security level %r, choose one of %s"
                             % (level, SECURITY_LEVELS))
    for n, max_bits in sorted(HE_STANDARD_MAX_LOG_Q[level].items()):
        # t = 1 mod 2n needs room above 2n
        bits = max(plain_bits, (2 * n).bit_length() + 2)
        if bits + 2 > max_bits:
            continue
        try:
            primes = coefficient_modulus(n, max_bits)
            t = plain_modulus_for(n, bits)
            params = EncryptionParams(n, primes, t, security_level=level)
        except ParameterError as error:
            logger.debug("Skipping n=%d at level %d: %s", n, level, error)
            continue
        capacity = NoiseEstimator(params).depth_capacity(margin_bits)
        logger.debug("n=%d level=%d estimated depth capacity %d", n, level, capacity)
        if capacity >= depth_hint:
            return params
    raise DepthUnreachableError(
        "Depth %d with a %d-bit plaintext modulus is unreachable at the %d-bit level"
        % (depth_hint, plain_bits, level))


def toy_params(n, coeff_bits, plain_modulus, prime_count=1, **kwargs):
    """Small insecure parameters for tests and experiments."""
    primes = generate_ntt_primes(coeff_bits, prime_count, n)
    return EncryptionParams(n, primes, plain_modulus, security_level=None, **kwargs)


def toy_preset(depth_hint, plain_bits=DEFAULT_PLAIN_BITS, margin_bits=0, min_degree=16,
               max_degree=1024, max_primes=16):
    """Smallest insecure parameters (degree first, then modulus) sustaining `depth_hint`."""
    from fhe_edge.bfv.noise import NoiseEstimator

    n = min_degree
    while n <= max_degree:
        bits = max(plain_bits, (2 * n).bit_length() + 2)
        t = plain_modulus_for(n, bits)
        for count in range(1, max_primes + 1):
            if count * MAX_WORD_PRIME_BITS <= bits + 2:
                continue
            primes = generate_ntt_primes(MAX_WORD_PRIME_BITS, count, n)
            params = EncryptionParams(n, primes, t, security_level=None)
            if NoiseEstimator(params).depth_capacity(margin_bits) >= depth_hint:
                return params
        n *= 2
    raise DepthUnreachableError("Depth %d is unreachable with toy parameters" % depth_hint)
