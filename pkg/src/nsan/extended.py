"""The shadow numeric domain.

``float`` values (binary32) are shadowed by binary64, which is just a Python
``float``.  ``double`` values are shadowed by :class:`Quad`, a software IEEE
binary128 with a 113-bit significand and correctly rounded ``+ - * /`` and
``sqrt``.
"""

from __future__ import annotations

import enum
import math
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Callable, Union

from . import fp
from .fp import BINARY32, BINARY64, BINARY128

_P = BINARY128.precision
_QMIN = BINARY128.qmin

_FINITE, _INF, _NAN = 0, 1, 2


class Quad:
    """Immutable binary128 value: ``(-1)**neg * m * 2**e`` or a special."""

    __slots__ = ("neg", "m", "e", "kind")

    def __init__(self, neg: bool = False, m: int = 0, e: int = 0, kind: int = _FINITE):
        self.neg = bool(neg)
        self.m = m
        self.e = e
        self.kind = kind

    # -- construction -------------------------------------------------------

    @classmethod
    def _round(cls, neg: bool, n: int, e: int, sticky: bool = False) -> Quad:
        r = fp.round_dyadic(n, e, BINARY128, sticky)
        if r is None:
            return cls(neg, 0, 0, _INF)
        m, q = r
        return cls(neg, m, q if m else _QMIN)

    @classmethod
    def from_float(cls, x: float) -> Quad:
        if x != x:
            return NAN
        if math.isinf(x):
            return INF if x > 0 else NEG_INF
        neg, n, e = fp.float_to_dyadic(x)
        return cls._round(neg, n, e)

    @classmethod
    def from_int(cls, v: int) -> Quad:
        return cls._round(v < 0, abs(v), 0)

    @classmethod
    def from_hex(cls, text: str) -> Quad:
        """Parse a hex float such as ``0x8.458cb4531bef87ap-47`` (rounded to 113 bits)."""
        t = text.strip().lower()
        if t.lstrip("+-") in ("inf", "infinity"):
            return NEG_INF if t.startswith("-") else INF
        if t.lstrip("+-") == "nan":
            return NAN
        return cls._round(*fp.parse_hex(t))

    @classmethod
    def from_fraction(cls, q: Fraction) -> Quad:
        neg = q < 0
        num, den = abs(q.numerator), q.denominator
        if num == 0:
            return NEG_ZERO if neg else ZERO
        # den is arbitrary: divide with enough guard bits and keep a sticky bit
        shift = max(0, _P + 3 - (num.bit_length() - den.bit_length()))
        quo, rem = divmod(num << shift, den)
        return cls._round(neg, quo, -shift, rem != 0)

    # -- inspection ---------------------------------------------------------

    def is_nan(self) -> bool:
        return self.kind == _NAN

    def is_inf(self) -> bool:
        return self.kind == _INF

    def is_finite(self) -> bool:
        return self.kind == _FINITE

    def is_zero(self) -> bool:
        return self.kind == _FINITE and self.m == 0

    def as_fraction(self) -> Fraction:
        if self.kind != _FINITE:
            raise ValueError("not a finite value")
        v = Fraction(self.m) * (Fraction(2) ** self.e)
        return -v if self.neg else v

    def to_float(self) -> float:
        """Round to binary64."""
        if self.kind == _NAN:
            return math.nan
        if self.kind == _INF:
            return -math.inf if self.neg else math.inf
        return fp.dyadic_to_float(self.neg, self.m, self.e, BINARY64)

    def to_f32(self) -> float:
        """Round directly to binary32 (no intermediate binary64 rounding)."""
        if self.kind != _FINITE:
            return self.to_float()
        return fp.dyadic_to_float(self.neg, self.m, self.e, BINARY32)

    def to_int(self) -> int:
        """Truncate toward zero."""
        if self.kind != _FINITE:
            raise ValueError("cannot convert non-finite value to int")
        v = self.m << self.e if self.e >= 0 else self.m >> -self.e
        return -v if self.neg else v

    # -- binary128 interchange encoding -------------------------------------

    def to_bits(self) -> int:
        sign = int(self.neg) << 127
        if self.kind == _NAN:
            return (0x7FFF << 112) | (1 << 111)
        if self.kind == _INF:
            return sign | (0x7FFF << 112)
        if self.m == 0:
            return sign
        if self.m.bit_length() < _P:  # subnormal, e == qmin
            return sign | self.m
        biased = self.e + _P - 1 + BINARY128.emax
        return sign | (biased << 112) | (self.m & ((1 << 112) - 1))

    @classmethod
    def from_bits(cls, b: int) -> Quad:
        neg = bool(b >> 127)
        biased = (b >> 112) & 0x7FFF
        frac = b & ((1 << 112) - 1)
        if biased == 0x7FFF:
            if frac:
                return NAN
            return NEG_INF if neg else INF
        if biased == 0:
            return cls(neg, frac, _QMIN)
        return cls(neg, frac | (1 << 112), biased - BINARY128.emax - _P + 1)

    def to_bytes(self) -> bytes:
        return self.to_bits().to_bytes(16, "little")

    @classmethod
    def from_bytes(cls, data: bytes) -> Quad:
        return cls.from_bits(int.from_bytes(data, "little"))

    # -- arithmetic ---------------------------------------------------------

    def __neg__(self) -> Quad:
        if self.kind == _NAN:
            return self
        return Quad(not self.neg, self.m, self.e, self.kind)

    def __abs__(self) -> Quad:
        if self.kind == _NAN or not self.neg:
            return self
        return Quad(False, self.m, self.e, self.kind)

    def __add__(self, other: Quad) -> Quad:
        if self.kind or other.kind:
            if self.kind == _NAN or other.kind == _NAN:
                return NAN
            if self.kind == _INF and other.kind == _INF:
                return self if self.neg == other.neg else NAN
            return self if self.kind == _INF else other
        if other.m == 0:
            if self.m == 0:
                return self if self.neg and other.neg else ZERO
            return self
        if self.m == 0:
            return other
        e = min(self.e, other.e)
        a = self.m << (self.e - e)
        b = other.m << (other.e - e)
        s = (-a if self.neg else a) + (-b if other.neg else b)
        if s == 0:
            return ZERO
        return Quad._round(s < 0, abs(s), e)

    def __sub__(self, other: Quad) -> Quad:
        return self + (-other)

    def __mul__(self, other: Quad) -> Quad:
        neg = self.neg != other.neg
        if self.kind or other.kind:
            if self.kind == _NAN or other.kind == _NAN:
                return NAN
            if self.is_zero() or other.is_zero():
                return NAN
            return NEG_INF if neg else INF
        if self.m == 0 or other.m == 0:
            return NEG_ZERO if neg else ZERO
        return Quad._round(neg, self.m * other.m, self.e + other.e)

    def __truediv__(self, other: Quad) -> Quad:
        neg = self.neg != other.neg
        if self.kind or other.kind:
            if self.kind == _NAN or other.kind == _NAN:
                return NAN
            if self.kind == _INF:
                return NAN if other.kind == _INF else (NEG_INF if neg else INF)
            return NEG_ZERO if neg else ZERO  # finite / inf
        if other.m == 0:
            if self.m == 0:
                return NAN
            return NEG_INF if neg else INF
        if self.m == 0:
            return NEG_ZERO if neg else ZERO
        shift = max(0, _P + 3 - (self.m.bit_length() - other.m.bit_length()))
        q, r = divmod(self.m << shift, other.m)
        return Quad._round(neg, q, self.e - other.e - shift, r != 0)

    def sqrt(self) -> Quad:
        if self.kind == _NAN:
            return NAN
        if self.m == 0 and self.kind == _FINITE:
            return self
        if self.neg:
            return NAN
        if self.kind == _INF:
            return self
        m, e = self.m, self.e
        shift = max(0, 2 * _P + 4 - m.bit_length())
        if (e - shift) & 1:
            shift += 1
        m <<= shift
        e -= shift
        r = math.isqrt(m)
        return Quad._round(False, r, e // 2, r * r != m)

    # -- comparison (IEEE: every ordered comparison with NaN is false) -------

    def _cmp(self, other: Quad) -> int | None:
        if self.kind == _NAN or other.kind == _NAN:
            return None
        a_zero, b_zero = self.is_zero(), other.is_zero()
        if a_zero and b_zero:
            return 0
        sa = 1 if a_zero else (-1 if self.neg else 1)
        sb = 1 if b_zero else (-1 if other.neg else 1)
        if a_zero or b_zero or sa != sb:
            ka = 0 if a_zero else sa
            kb = 0 if b_zero else sb
            return (ka > kb) - (ka < kb)
        mag = self._cmp_mag(other)
        return mag if sa > 0 else -mag

    def _cmp_mag(self, other: Quad) -> int:
        if self.kind == _INF or other.kind == _INF:
            return (self.kind == _INF) - (other.kind == _INF)
        la, lb = self.e + self.m.bit_length(), other.e + other.m.bit_length()
        if la != lb:
            return 1 if la > lb else -1
        e = min(self.e, other.e)
        a, b = self.m << (self.e - e), other.m << (other.e - e)
        return (a > b) - (a < b)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Quad):
            return NotImplemented
        return self._cmp(other) == 0

    def __ne__(self, other: object) -> bool:
        if not isinstance(other, Quad):
            return NotImplemented
        return self._cmp(other) != 0

    def __lt__(self, other: Quad) -> bool:
        return self._cmp(other) == -1

    def __le__(self, other: Quad) -> bool:
        return self._cmp(other) in (-1, 0)

    def __gt__(self, other: Quad) -> bool:
        return self._cmp(other) == 1

    def __ge__(self, other: Quad) -> bool:
        return self._cmp(other) in (0, 1)

    def __bool__(self) -> bool:
        return not self.is_zero()

    def __hash__(self) -> int:
        return hash((self.neg, self.m, self.e, self.kind))

    def identical(self, other: Quad) -> bool:
        """Bitwise identity (distinguishes -0 from +0, NaN equals NaN)."""
        return self.to_bits() == other.to_bits()

    # -- text ---------------------------------------------------------------

    def hex(self) -> str:
        if self.kind == _NAN:
            return "nan"
        if self.kind == _INF:
            return "-inf" if self.neg else "inf"
        return fp.format_hex(self.neg, self.m, self.e, _P)

    def fixed(self, places: int = 20) -> str:
        """Decimal rendering with a fixed number of fraction digits."""
        if self.kind != _FINITE:
            return self.hex()
        q = self.as_fraction()
        with localcontext() as ctx:
            ctx.prec = 6000
            d = Decimal(q.numerator) / Decimal(q.denominator)
            text = f"{d:.{places}f}"
        if self.neg and not text.startswith("-"):
            text = "-" + text
        return text

    def __repr__(self) -> str:
        return f"Quad({self.hex()!r})"

    __str__ = hex


ZERO = Quad(False, 0, _QMIN)
NEG_ZERO = Quad(True, 0, _QMIN)
INF = Quad(False, 0, 0, _INF)
NEG_INF = Quad(True, 0, 0, _INF)
NAN = Quad(False, 0, 0, _NAN)

ShadowScalar = Union[float, Quad]


def ext(x: float) -> Quad:
    """Extend a binary64 value into the binary128 shadow domain."""
    return Quad.from_float(x)


def ext_arith(op: str, a: Quad, b: Quad | None = None) -> Quad:
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    if op == "neg":
        return -a
    raise ValueError(f"unknown extended op {op!r}")


# -- binary64 helpers with IEEE semantics (Python raises on x/0) --------------

def fdiv(a: float, b: float) -> float:
    if b:
        return a / b
    if a != a or a == 0.0:
        return math.nan
    neg = (math.copysign(1.0, a) < 0) != (math.copysign(1.0, b) < 0)
    return -math.inf if neg else math.inf


def fsqrt(a: float) -> float:
    if a < 0:
        return math.nan
    return math.sqrt(a)


def exact_fma(a: float, b: float, c: float, fmt: fp.Format = BINARY64) -> float:
    """``a * b + c`` with a single rounding into ``fmt``."""
    if not (math.isfinite(a) and math.isfinite(b) and math.isfinite(c)):
        return round_to(a * b + c, fmt)
    na, ma, ea = fp.float_to_dyadic(a)
    nb, mb, eb = fp.float_to_dyadic(b)
    nc, mc, ec = fp.float_to_dyadic(c)
    p = ma * mb
    pe = ea + eb
    e = min(pe, ec)
    s = (-(p << (pe - e)) if na != nb else p << (pe - e)) + (-(mc << (ec - e)) if nc else mc << (ec - e))
    if s == 0:
        # exact zero: keeps the common sign of both terms, otherwise +0
        both_neg = p == 0 and mc == 0 and na != nb and nc
        return -0.0 if both_neg else 0.0
    return fp.dyadic_to_float(s < 0, abs(s), e, fmt)


def round_to(x: float, fmt: fp.Format) -> float:
    return fp.round_f32(x) if fmt is BINARY32 else x


# -- truncation and the relative-error metric ---------------------------------

class ErrorClass(enum.Enum):
    ABS_ONLY = "abs-only"
    CATEGORICAL_MISMATCH = "categorical-mismatch"


ABS_ONLY = ErrorClass.ABS_ONLY
CATEGORICAL_MISMATCH = ErrorClass.CATEGORICAL_MISMATCH


def truncate_shadow(s: ShadowScalar, target: str) -> float:
    """Round a shadow back into the application type (``'f32'`` or ``'f64'``)."""
    if isinstance(s, Quad):
        return s.to_f32() if target == "f32" else s.to_float()
    return fp.round_f32(s) if target == "f32" else s


def relative_error(v: float, s: ShadowScalar, vtype: str) -> float | ErrorClass:
    t = truncate_shadow(s, vtype)
    v_nan, t_nan = v != v, t != t
    if v_nan or t_nan:
        return 0.0 if v_nan and t_nan else CATEGORICAL_MISMATCH
    v_inf, t_inf = math.isinf(v), math.isinf(t)
    if v_inf or t_inf:
        return 0.0 if v == t else CATEGORICAL_MISMATCH
    if t == 0.0:
        return ABS_ONLY
    err = abs(v - t) / abs(t)
    if math.isinf(err):
        err = float(abs(Fraction(v) - Fraction(t)) / abs(Fraction(t)))
    return err


def format_percent(err: float | ErrorClass) -> str:
    if isinstance(err, ErrorClass):
        return err.value
    pct = err * 100
    if pct < 1:
        # small errors keep three significant digits (0.00188%)
        return f"{pct:.3g}%"
    # truncate, not round: 0.6070523 prints as 60.70%
    text = f"{pct:.6f}"
    return text[:text.index(".") + 3] + "%"


# -- shadow math registry -------------------------------------------------------

class MathEntry:
    """How the shadow of a recognised library call is computed.

    ``counterpart`` names the builtin the instrumentation calls on shadow
    operands; ``None`` means the shadow resumes from the application result.
    """

    __slots__ = ("name", "vtype", "counterpart", "impl")

    def __init__(self, name: str, vtype: str, counterpart: str | None, impl: Callable | None):
        self.name = name
        self.vtype = vtype
        self.counterpart = counterpart
        self.impl = impl

    @property
    def resumes(self) -> bool:
        return self.counterpart is None


def f64_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def f64_log(x: float) -> float:
    if x == 0:
        return -math.inf
    if x < 0 or x != x:
        return math.nan
    return math.log(x)


def f64_trig(f: Callable[[float], float]) -> Callable[[float], float]:
    def g(x: float) -> float:
        if not math.isfinite(x):
            return math.nan
        return f(x)
    return g


f64_sin = f64_trig(math.sin)
f64_cos = f64_trig(math.cos)

MATH_REGISTRY: dict[str, MathEntry] = {}


def _register(name: str, vtype: str, counterpart: str | None, impl: Callable | None) -> None:
    MATH_REGISTRY[name] = MathEntry(name, vtype, counterpart, impl)


# float calls: evaluate the binary64 counterpart on the binary64 shadow
_register("fabsf", "f32", "fabs", abs)
_register("sqrtf", "f32", "sqrt", fsqrt)
_register("sinf", "f32", "sin", f64_sin)
_register("cosf", "f32", "cos", f64_cos)
_register("expf", "f32", "exp", f64_exp)
_register("logf", "f32", "log", f64_log)
_register("fmaf", "f32", "fma", exact_fma)
# double calls: exact binary128 versions where cheap, otherwise resume
_register("fabs", "f64", "fabsq", abs)
_register("sqrt", "f64", "sqrtq", Quad.sqrt)
_register("sin", "f64", None, None)
_register("cos", "f64", None, None)
_register("exp", "f64", None, None)
_register("log", "f64", None, None)
_register("fma", "f64", None, None)


class UnknownMathFunction(KeyError):
    pass


def shadow_math(name: str, args: list[ShadowScalar], app_result: float) -> ShadowScalar:
    """Shadow of ``name(args)`` given the application result.

    Raises :class:`UnknownMathFunction` when ``name`` is not registered; the
    caller is expected to fall back to ``extend(app_result)``.
    """
    entry = MATH_REGISTRY.get(name)
    if entry is None:
        raise UnknownMathFunction(name)
    if entry.resumes:
        return ext(app_result)
    return entry.impl(*args)
