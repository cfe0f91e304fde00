"""
Encoding real network data into Z_t plaintexts.

* Batching: the plaintext ring splits into n independent Z_t slots (t is a
  prime congruent to 1 mod 2n), and slot j of every vector carries sample j
  of an inference batch.
* Fixed point: a real x travels as round(Delta^k * x) mod t, where k is the
  scale power of the value.

"""
import functools
import logging
from collections import namedtuple

import numpy as np

from fhe_edge.bfv.keys import Plaintext
from fhe_edge.exceptions import (
    ParameterError, QuantizationOverflowError, RangeError, ScaleMismatchError
)
from fhe_edge.modring import (
    EVALUATION, PrimeModulus, RingPoly, RnsBasis, from_integers, ntt_forward, ntt_inverse
)
from fhe_edge.utils import as_int_array, center, is_power_of_two, round_half_away

logger = logging.getLogger(__name__)


@functools.lru_cache(maxsize=32)
def _plain_basis(n, t):
    return RnsBasis([PrimeModulus.create(t, n)])


class BatchLayout(namedtuple("BatchLayout", ["slot_count", "plain_modulus"])):
    __slots__ = ()

    @classmethod
    def from_params(cls, params):
        return cls(params.n, params.t)

    @property
    def basis(self):
        return _plain_basis(self.slot_count, self.plain_modulus)


def batch_encode(values, layout):
    """Plaintext whose slots hold `values`; missing trailing slots are zero."""
    values = as_int_array(values)
    n, t = layout.slot_count, layout.plain_modulus
    if len(values) > n:
        raise RangeError("%d values do not fit in %d slots" % (len(values), n))
    if any(v < 0 or v >= t for v in values):
        raise RangeError("Slot values must lie in [0, %d)" % t)
    slots = np.zeros(n, dtype=object)
    slots[:len(values)] = values
    basis = layout.basis
    residues = np.empty((1, n), dtype=basis.dtype)
    residues[0] = slots
    return Plaintext(ntt_inverse(RingPoly(residues, basis, EVALUATION)))


def batch_decode(pt, layout):
    if pt.modulus != layout.plain_modulus or pt.poly.n != layout.slot_count:
        raise RangeError("Plaintext does not belong to %r" % (layout,))
    return as_int_array(ntt_forward(pt.poly).residues[0])


def encode_scalar(value, layout):
    """Plaintext holding `value` in every slot, a constant polynomial."""
    t = layout.plain_modulus
    coefficients = np.zeros(layout.slot_count, dtype=object)
    coefficients[0] = int(value) % t
    return Plaintext(from_integers(coefficients, layout.basis))


class ScaleState(namedtuple("ScaleState", ["power"])):
    __slots__ = ()

    def __new__(cls, power):
        if power < 0:
            raise ScaleMismatchError("Scale power must be non-negative, got %d" % power)
        return super().__new__(cls, int(power))


ADD = "add"
MUL = "mul"


def compose_scales(op, a, b):
    if op == ADD:
        if a.power != b.power:
            raise ScaleMismatchError(
                "Cannot add values at scale powers %d and %d" % (a.power, b.power))
        return ScaleState(a.power)
    if op == MUL:
        return ScaleState(a.power + b.power)
    raise ValueError("Unknown scale operation %r" % op)


class FixedPointCodec(namedtuple("FixedPointCodec", ["scale", "plain_modulus"])):
    """Power-of-two scale Delta and the plaintext modulus values are reduced by.

    ``plain_modulus`` may be None while parameters are still being chosen;
    such a codec quantizes but cannot encode slots.

    """
    __slots__ = ()

    def __new__(cls, scale, plain_modulus=None):
        if scale < 2 or not is_power_of_two(scale):
            raise ParameterError("Scale must be a power of two >= 2, got %r" % scale)
        if plain_modulus is not None:
            plain_modulus = int(plain_modulus)
        return super().__new__(cls, int(scale), plain_modulus)

    def with_modulus(self, plain_modulus):
        return FixedPointCodec(self.scale, plain_modulus)

    def factor(self, power):
        return self.scale ** power

    def max_abs(self, power=1):
        """Open bound on the reals representable at `power`."""
        if self.plain_modulus is None:
            return float("inf")
        return self.plain_modulus / (2 * self.factor(power))

    def check_range(self, x, power=1):
        x = np.asarray(x, dtype=float)
        if x.size and not np.all(np.isfinite(x)):
            raise QuantizationOverflowError("Non-finite value cannot be encoded")
        if x.size and np.max(np.abs(x)) >= self.max_abs(power):
            raise QuantizationOverflowError(
                "Value %g outside the representable range (-%g, %g) at power %d"
                % (np.max(np.abs(x)), self.max_abs(power), self.max_abs(power), power))

    def quantize(self, x, power=1):
        """Signed integers round(Delta^power * x), before reduction mod t."""
        self.check_range(x, power)
        scaled = round_half_away(np.asarray(x, dtype=float) * float(self.factor(power)))
        return np.vectorize(int, otypes=[object])(scaled) if scaled.ndim else int(scaled)


def fix_encode(x, codec, power=1):
    """Slots round(Delta^power * x) mod t and the scale they carry."""
    if codec.plain_modulus is None:
        raise ParameterError("The codec has no plaintext modulus yet")
    signed = codec.quantize(np.atleast_1d(np.asarray(x, dtype=float)), power)
    return signed % codec.plain_modulus, ScaleState(power)


def fix_decode(slots, state, codec):
    """Centered lift of the slots divided by Delta^power."""
    centered = center(as_int_array(np.atleast_1d(slots)), codec.plain_modulus)
    factor = codec.factor(state.power)
    return np.array([int(v) / factor for v in centered], dtype=float)
