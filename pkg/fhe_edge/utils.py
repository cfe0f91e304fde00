import functools
import time
from contextlib import contextmanager

import numpy as np

# Inspired in https://github.com/poliastro/poliastro/blob/88edda8/src/poliastro/jit.py
try:
    from numba import njit
except ImportError:
    import inspect

    def njit(first=None, *args, **kwargs):
        """Identity JIT, returns unchanged function."""
        def _jit(f):
            return f

        if inspect.isfunction(first):
            return first
        else:
            return _jit


def is_power_of_two(n):
    return n > 0 and (n & (n - 1)) == 0


def bit_reverse_indices(n):
    """Permutation mapping i to its bit-reversal over log2(n) bits."""
    bits = n.bit_length() - 1
    indices = np.arange(n, dtype=np.int64)
    reversed_ = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        reversed_ = (reversed_ << 1) | (indices & 1)
        indices >>= 1
    return reversed_


def round_div(numerator, denominator):
    """Integer division rounding half away from zero.

    Works elementwise on Python integers and numpy object arrays;
    denominator must be positive.

    """
    if isinstance(numerator, np.ndarray):
        magnitude = (2 * np.abs(numerator) + denominator) // (2 * denominator)
        return np.where(numerator < 0, -magnitude, magnitude)
    magnitude = (2 * abs(numerator) + denominator) // (2 * denominator)
    return -magnitude if numerator < 0 else magnitude


def round_half_away(x):
    """Round floats half away from zero."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def center(values, modulus):
    """Centered representative in [-modulus/2, modulus/2)."""
    values = values % modulus
    return np.where(values >= (modulus + 1) // 2, values - modulus, values)


def as_int_array(values):
    """Python-integer object array, the carrier for exact wide arithmetic."""
    out = np.empty(len(values), dtype=object)
    out[:] = [int(v) for v in values]
    return out


@contextmanager
def stopwatch():
    """Yields a one-element list that receives the elapsed seconds on exit."""
    elapsed = [0.0]
    start = time.perf_counter()
    try:
        yield elapsed
    finally:
        elapsed[0] = time.perf_counter() - start


class reify:
    """
    Use as a class method decorator.  It operates almost exactly like the
    Python ``@property`` decorator, but it puts the result of the method it
    decorates into the instance dict after the first call, effectively
    replacing the function it decorates with an instance variable.  It is, in
    Python parlance, a non-data descriptor.

    Taken from: http://docs.pylonsproject.org/projects/pyramid/en/latest/api/decorator.html
    """

    def __init__(self, wrapped):
        self.wrapped = wrapped
        functools.update_wrapper(self, wrapped)

    def __get__(self, inst, objtype=None):
        if inst is None:
            return self
        val = self.wrapped(inst)
        setattr(inst, self.wrapped.__name__, val)
        return val
