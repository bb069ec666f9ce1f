import math
import struct
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from nsan import fp

finite = st.floats(allow_nan=False, allow_infinity=False)


@given(st.floats(allow_nan=False))
def test_round_f32_matches_numpy(x):
    with np.errstate(over="ignore"):
        assert fp.round_f32(x) == float(np.float32(x))


def test_round_f32_edges():
    big = float(np.finfo(np.float32).max)
    assert fp.round_f32(big) == big
    # the tie just above the largest finite binary32 overflows (its mantissa is odd)
    assert fp.round_f32(big + 2.0 ** 103) == math.inf
    assert fp.round_f32(big + 2.0 ** 102) == big
    assert fp.round_f32(-1e300) == -math.inf
    assert fp.round_f32(2.0 ** -150) == 0.0
    assert fp.round_f32(2.0 ** -149) == 2.0 ** -149
    assert math.copysign(1.0, fp.round_f32(-0.0)) == -1.0
    # ties go to even
    assert fp.round_f32(1.0 + 2.0 ** -24) == 1.0
    assert fp.round_f32(1.0 + 3 * 2.0 ** -24) == 1.0 + 2.0 ** -22


@given(finite)
def test_float_dyadic_roundtrip(x):
    neg, n, e = fp.float_to_dyadic(x)
    assert fp.dyadic_to_float(neg, n, e) == x
    assert Fraction(x) == (-1 if neg else 1) * n * Fraction(2) ** e


@given(st.integers(min_value=-(1 << 70), max_value=1 << 70), st.integers(min_value=1, max_value=1 << 70))
def test_fraction_to_float_is_correctly_rounded(num, den):
    got = fp.fraction_to_float(num < 0, abs(num), den)
    assert got == float(Fraction(num, den))


@given(st.integers(min_value=-(1 << 64), max_value=1 << 64))
def test_int_to_float(v):
    assert fp.int_to_float(v, fp.BINARY64) == float(v)
    with mpmath.workprec(24):
        assert fp.int_to_float(v, fp.BINARY32) == float(+mpmath.mpf(v))


@given(st.integers(min_value=0, max_value=(1 << 32) - 1))
def test_f32_bits_roundtrip(b):
    x = fp.bits_to_f32(b)
    if x == x:
        assert fp.f32_to_bits(x) == b
    assert struct.pack("<f", x) == struct.pack("<I", b) or x != x


@given(finite)
def test_hex_roundtrip(x):
    text = fp.hex_float(x)
    neg, n, e = fp.parse_hex(text)
    assert fp.dyadic_to_float(neg, n, e) == x
    assert float.fromhex(text) == x


def test_hex_format_shape():
    assert fp.hex_float(float.fromhex("0x1.a00b086c4888fp-46")) == "0x1.a00b086c4888fp-46"
    assert fp.hex_float(1.0) == "0x1p+0"
    assert fp.parse_hex("0x8.458cb4531bef87ap-47")[1] == 0x8458CB4531BEF87A


def test_parse_hex_rejects_garbage():
    with pytest.raises(ValueError):
        fp.parse_hex("0x1.gp3")
