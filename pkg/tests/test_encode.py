import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.strategies import floats, integers, lists

from fhe_edge.encode import (
    ADD, MUL, BatchLayout, FixedPointCodec, ScaleState, batch_decode, batch_encode,
    compose_scales, encode_scalar, fix_decode, fix_encode
)
from fhe_edge.exceptions import (
    ParameterError, QuantizationOverflowError, RangeError, ScaleMismatchError
)

LAYOUT = BatchLayout(16, 97)


@settings(max_examples=50)
@given(lists(integers(0, 96), min_size=0, max_size=16))
def test_batch_roundtrip(values):
    decoded = batch_decode(batch_encode(values, LAYOUT), LAYOUT)
    assert [int(v) for v in decoded] == values + [0] * (16 - len(values))


def test_batch_too_many_values():
    with pytest.raises(RangeError):
        batch_encode([1] * 17, LAYOUT)


def test_batch_values_out_of_range():
    with pytest.raises(RangeError):
        batch_encode([97], LAYOUT)
    with pytest.raises(RangeError):
        batch_encode([-1], LAYOUT)


def test_batch_decode_other_layout():
    with pytest.raises(RangeError):
        batch_decode(batch_encode([1], LAYOUT), BatchLayout(16, 193))


def test_scalar_fills_every_slot():
    pt = encode_scalar(-3, LAYOUT)
    assert pt.is_constant()
    assert [int(v) for v in batch_decode(pt, LAYOUT)] == [94] * 16


def test_layout_requires_batching_prime():
    with pytest.raises(ParameterError):
        batch_encode([1], BatchLayout(16, 101))


def test_codec_scale_must_be_power_of_two():
    with pytest.raises(ParameterError):
        FixedPointCodec(3)
    with pytest.raises(ParameterError):
        FixedPointCodec(1)


def test_quantize_rounds_half_away_from_zero():
    codec = FixedPointCodec(4)
    assert codec.quantize(0.125) == 1
    assert codec.quantize(-0.125) == -1
    assert list(codec.quantize([0.5, -0.25, 1.0], 2)) == [8, -4, 16]


def test_quantize_range_check():
    codec = FixedPointCodec(4, 97)
    # 97 / (2 * 4) = 12.125
    assert codec.max_abs(1) == pytest.approx(12.125)
    codec.check_range([12.0])
    with pytest.raises(QuantizationOverflowError):
        codec.quantize([12.5])
    with pytest.raises(QuantizationOverflowError):
        codec.quantize([np.nan])


@settings(max_examples=50)
@given(floats(-12, 12))
def test_fix_roundtrip_within_half_a_step(x):
    codec = FixedPointCodec(4, 97)
    slots, state = fix_encode([x], codec)
    assert state == ScaleState(1)
    assert abs(fix_decode(slots, state, codec)[0] - x) <= 0.125


def test_fix_encode_needs_modulus():
    with pytest.raises(ParameterError):
        fix_encode([1.0], FixedPointCodec(4))


def test_decode_higher_power():
    codec = FixedPointCodec(4, 65537)
    # -1.5 at power 2 is -24
    assert fix_decode([65537 - 24], ScaleState(2), codec)[0] == -1.5


def test_scale_composition():
    one, two = ScaleState(1), ScaleState(2)
    assert compose_scales(MUL, one, one) == two
    assert compose_scales(ADD, two, two) == two
    with pytest.raises(ScaleMismatchError):
        compose_scales(ADD, one, two)
    with pytest.raises(ScaleMismatchError):
        ScaleState(-1)
