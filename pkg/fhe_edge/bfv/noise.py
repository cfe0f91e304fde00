"""
Noise accounting
~~~~~~~~~~~~~~~~

Two views of the same quantity, the invariant noise v of a ciphertext:

* :func:`noise_budget` measures it exactly with the secret key.
* :class:`NoiseEstimator` predicts it from the operation history alone,
  without any key. Estimates are log2 magnitudes and err on the
  pessimistic side.

The budget is floor(-log2(2 * |v|)) bits, clamped at zero. Decryption is
correct whenever it is positive.

"""
import functools
import logging
import math

import numpy as np

from fhe_edge.exceptions import BudgetExhaustedError, UsageError
from fhe_edge.modring import ntt_inverse, to_integers

logger = logging.getLogger(__name__)

# Tail cut for the fresh-noise bound, in standard deviations
TAIL_CUT = 6


def _phase_integers(ct, secret_key):
    from fhe_edge.bfv.keys import evaluation_phase

    if ct.params != secret_key.params:
        raise UsageError("Ciphertext and secret key were built for different parameters")
    return to_integers(ntt_inverse(evaluation_phase(ct.polys, secret_key)))


def noise_norm(ct, secret_key):
    """Largest centered coefficient of [t * phase]_q, that is q * |v|."""
    q, t = ct.params.q, ct.params.t
    scaled = (_phase_integers(ct, secret_key) * t) % q
    half = q // 2
    return max(abs(v - q) if v > half else v for v in scaled)


def noise_budget(ct, secret_key):
    """Remaining noise budget in bits, measured with the secret key."""
    q = ct.params.q
    norm = noise_norm(ct, secret_key)
    if norm == 0:
        return q.bit_length() - 1
    return max(0, (q // (2 * norm)).bit_length() - 1)


def validate_decryption(ct, secret_key, expected=None):
    """Raise when a ciphertext can no longer be trusted to decrypt.

    `expected`, when given, is the plaintext the caller knows it should hold.
    Meant for tests and backend diagnostics.

    """
    from fhe_edge.bfv.evaluator import decrypt

    budget = noise_budget(ct, secret_key)
    if budget <= 0:
        logger.error("Noise budget exhausted for ciphertext of size %d", ct.size)
        raise BudgetExhaustedError("Noise budget exhausted, decryption is unreliable")
    if expected is not None and decrypt(ct, secret_key) != expected:
        raise BudgetExhaustedError("Decryption does not match the expected plaintext")
    return budget


class NoiseEstimator:
    """Key-free invariant-noise model, every method works on log2 magnitudes."""

    def __init__(self, params):
        self.params = params
        n, t, q = params.n, params.t, params.q
        self.n = n
        self.log_t = math.log2(t)
        self.log_t_over_q = math.log2(t) - math.log2(q)
        self.log_q = math.log2(q)
        sigma = params.noise_sigma
        fresh_bound = TAIL_CUT * sigma * math.sqrt(4 * n / 3 + 1)
        self._fresh = self.log_t_over_q + math.log2(fresh_bound + 0.5)
        self._expansion = math.log2(2 * math.sqrt(n))
        self._rounding = self.log_t_over_q + math.log2(n)
        base = 1 << params.relin_decomposition_bits
        self._relin = self.log_t_over_q + math.log2(
            2 * base * sigma * math.sqrt(params.relin_key_count * n))

    def fresh(self):
        return self._fresh

    def add(self, x, y):
        return float(np.logaddexp2(x, y))

    def add_plain(self, x):
        return float(np.logaddexp2(x, self.log_t_over_q - 1))

    def negate(self, x):
        return x

    def multiply_plain(self, x, plain_norm, constant=True):
        """Product with a plaintext whose largest centered coefficient is plain_norm."""
        if plain_norm == 0:
            return -math.inf
        growth = math.log2(plain_norm)
        if not constant:
            growth += self._expansion
        return x + growth

    def multiply(self, x, y):
        tensor = math.log2(self.n) + self.log_t + self.add(x, y)
        return self.add(tensor, self._rounding)

    def relinearize(self, x):
        return self.add(x, self._relin)

    def square(self, x):
        return self.relinearize(self.multiply(x, x))

    def budget(self, x):
        if x == -math.inf:
            return int(self.log_q)
        return max(0, math.floor(-x - 1))

    def depth_capacity(self, margin_bits=0, limit=64):
        """Number of chained squarings that keep more than margin_bits of budget."""
        x = self.fresh()
        depth = 0
        while depth < limit:
            x = self.square(x)
            if self.budget(x) <= margin_bits:
                break
            depth += 1
        return depth


@functools.lru_cache(maxsize=32)
def estimator_for(params):
    return NoiseEstimator(params)


def measure_depth_capacity(keyset, rng=None, limit=32):
    """Squarings a fresh ciphertext survives, measured with the real scheme."""
    from fhe_edge.bfv.evaluator import encrypt, square
    from fhe_edge.bfv.keys import Plaintext, make_rng

    rng = make_rng(rng)
    params = keyset.params
    message = Plaintext.from_coefficients(
        [int(v) for v in rng.integers(0, params.t, size=params.n)], params)
    ct = encrypt(message, keyset.public_key, rng)
    depth = 0
    while depth < limit:
        ct = square(ct, keyset.relin_keys)
        if noise_budget(ct, keyset.secret_key) <= 0:
            break
        depth += 1
    logger.debug("Measured depth capacity %d for %r", depth, params)
    return depth
