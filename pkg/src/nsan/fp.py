"""Bit-level IEEE-754 helpers shared by the IR, the shadow domain and the engine.

Everything here works on exact dyadic rationals ``n * 2**e`` held in Python
integers, so rounding into binary32, binary64 or binary128 is always a single
correctly-rounded step (round-to-nearest, ties-to-even).
"""

from __future__ import annotations

import array
import math
import re
import struct
from dataclasses import dataclass

_F32 = struct.Struct("<f")
_F64 = struct.Struct("<d")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


@dataclass(frozen=True)
class Format:
    name: str
    precision: int  # significand bits, hidden bit included
    emax: int
    width: int  # bytes

    @property
    def emin(self) -> int:
        return 1 - self.emax

    @property
    def qmin(self) -> int:
        """Exponent of the smallest subnormal quantum."""
        return self.emin - self.precision + 1

    @property
    def exp_bits(self) -> int:
        return self.width * 8 - self.precision


BINARY32 = Format("f32", 24, 127, 4)
BINARY64 = Format("f64", 53, 1023, 8)
BINARY128 = Format("f128", 113, 16383, 16)

FORMATS = {f.name: f for f in (BINARY32, BINARY64, BINARY128)}


def round_dyadic(n: int, e: int, fmt: Format, sticky: bool = False) -> tuple[int, int] | None:
    """Round ``n * 2**e`` (n >= 0) into ``fmt``.

    ``sticky`` marks a nonzero remainder below the last bit of ``n``; callers
    must then provide at least ``precision + 2`` significant bits.  Returns
    ``(m, q)`` with value ``m * 2**q`` and ``m < 2**precision``, or ``None`` on
    overflow to infinity.
    """
    if n == 0:
        return 0, fmt.qmin
    p = fmt.precision
    q = max(e + n.bit_length() - p, fmt.qmin)
    if q > e:
        shift = q - e
        rem = n & ((1 << shift) - 1)
        n >>= shift
        half = 1 << (shift - 1)
        if rem > half or (rem == half and (sticky or n & 1)):
            n += 1
            if n >> p:
                n >>= 1
                q += 1
        e = q
    elif n.bit_length() < p and e > fmt.qmin:
        # left-normalise so equal values share one representation
        shift = min(p - n.bit_length(), e - fmt.qmin)
        n <<= shift
        e -= shift
    if n and e + n.bit_length() - 1 > fmt.emax:
        return None
    return n, e


def dyadic_to_float(neg: bool, n: int, e: int, fmt: Format = BINARY64, sticky: bool = False) -> float:
    """Correctly rounded conversion of ``(-1)**neg * n * 2**e`` to a Python float in ``fmt``."""
    r = round_dyadic(n, e, fmt, sticky)
    if r is None:
        return -math.inf if neg else math.inf
    m, q = r
    x = math.ldexp(m, q) if m else 0.0
    return -x if neg else x


def fraction_to_float(neg: bool, num: int, den: int, fmt: Format = BINARY64) -> float:
    """Correctly rounded ``(-1)**neg * num / den`` in ``fmt`` (``num, den >= 0``)."""
    if num == 0:
        return -0.0 if neg else 0.0
    shift = max(0, fmt.precision + 3 - (num.bit_length() - den.bit_length()))
    q, r = divmod(num << shift, den)
    return dyadic_to_float(neg, q, -shift, fmt, r != 0)


def float_to_dyadic(x: float) -> tuple[bool, int, int]:
    """Exact ``(neg, n, e)`` for a finite float."""
    neg = math.copysign(1.0, x) < 0
    if x == 0.0:
        return neg, 0, 0
    m, e = math.frexp(abs(x))
    n = int(m * (1 << 53))
    e -= 53
    tz = (n & -n).bit_length() - 1
    return neg, n >> tz, e + tz


_ROUND_CELL = array.array("f", [0.0])


def round_f32(x: float) -> float:
    """Round a binary64 value to the nearest binary32 (ties-to-even).

    Storing into an ``array('f')`` is a C ``(float)`` conversion, which is
    correctly rounded and overflows to infinity.
    """
    cell = _ROUND_CELL
    cell[0] = x
    return cell[0]


def is_f32(x: float) -> bool:
    return x != x or round_f32(x) == x


def int_to_float(v: int, fmt: Format) -> float:
    if -(1 << 53) <= v <= (1 << 53):
        x = float(v)
        return round_f32(x) if fmt is BINARY32 else x
    return dyadic_to_float(v < 0, abs(v), 0, fmt)


# -- bit patterns -----------------------------------------------------------

def f32_to_bits(x: float) -> int:
    return _U32.unpack(_F32.pack(x))[0]


def bits_to_f32(b: int) -> float:
    return _F32.unpack(_U32.pack(b & 0xFFFFFFFF))[0]


def f64_to_bits(x: float) -> int:
    return _U64.unpack(_F64.pack(x))[0]


def bits_to_f64(b: int) -> float:
    return _F64.unpack(_U64.pack(b & 0xFFFFFFFFFFFFFFFF))[0]


# -- hexadecimal floats -----------------------------------------------------

_HEX_RE = re.compile(
    r"""^(?P<sign>[-+]?)0x(?:p(?=[0-9a-f]))?   # tolerate the '0xp1.8p0' spelling
        (?P<int>[0-9a-f]*)(?:\.(?P<frac>[0-9a-f]*))?
        p(?P<exp>[-+]?\d+)$""",
    re.IGNORECASE | re.VERBOSE,
)


def parse_hex(text: str) -> tuple[bool, int, int]:
    """Decode a hexadecimal float literal into an exact ``(neg, n, e)`` triple."""
    m = _HEX_RE.match(text.strip())
    if not m or not (m.group("int") or m.group("frac")):
        raise ValueError(f"invalid hexadecimal float literal {text!r}")
    digits = (m.group("int") or "") + (m.group("frac") or "")
    n = int(digits, 16)
    e = int(m.group("exp")) - 4 * len(m.group("frac") or "")
    return m.group("sign") == "-", n, e


def format_hex(neg: bool, n: int, e: int, precision: int) -> str:
    """Normalised ``0x1.<frac>p<exp>`` text with trailing zero digits dropped.

    ``n`` must fit in ``precision`` bits.  Subnormals are normalised too, so
    the exponent may fall below the format's ``emin``.
    """
    sign = "-" if neg else ""
    if n == 0:
        return f"{sign}0x0p+0"
    fbits = precision - 1
    ndig = (fbits + 3) // 4
    bl = n.bit_length()
    # exponent of the leading bit
    lead = e + bl - 1
    frac = (n << (4 * ndig + 1 - bl)) if 4 * ndig + 1 >= bl else n >> (bl - 4 * ndig - 1)
    frac &= (1 << (4 * ndig)) - 1
    digits = f"{frac:0{ndig}x}".rstrip("0")
    body = f"0x1.{digits}" if digits else "0x1"
    return f"{sign}{body}p{lead:+d}"


def hex_float(x: float) -> str:
    """Shortest normalised hex text of a binary32/binary64 value (``0x1p+0``)."""
    if x != x:
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    neg, n, e = float_to_dyadic(x)
    return format_hex(neg, n, e, 53)
