"""In-memory form of the SSA IR."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Union

from .. import fp
from ..extended import Quad

SCALAR_SIZES = {
    "i1": 1, "i8": 1, "i32": 4, "i64": 8,
    "f32": 4, "f64": 8, "f128": 16, "ptr": 8,
}
INT_BITS = {"i1": 1, "i8": 8, "i32": 32, "i64": 64}
FLOAT_SCALARS = ("f32", "f64", "f128")
VECTOR_SCALARS = ("f32", "f64", "f128", "i32", "i64")


@dataclass(frozen=True)
class IrType:
    scalar: str
    lanes: int = 1

    def __post_init__(self):
        if self.scalar != "void" and self.scalar not in SCALAR_SIZES:
            raise ValueError(f"unknown scalar type {self.scalar!r}")
        if self.lanes < 1:
            raise ValueError("lane count must be positive")
        if self.lanes > 1 and self.scalar not in VECTOR_SCALARS:
            raise ValueError(f"vectors of {self.scalar} are not supported")

    @property
    def is_void(self) -> bool:
        return self.scalar == "void"

    @property
    def is_vector(self) -> bool:
        return self.lanes > 1

    @property
    def is_float(self) -> bool:
        return self.scalar in FLOAT_SCALARS

    @property
    def is_int(self) -> bool:
        return self.scalar in INT_BITS

    @property
    def is_ptr(self) -> bool:
        return self.scalar == "ptr"

    @property
    def element(self) -> IrType:
        return IrType(self.scalar) if self.lanes > 1 else self

    @property
    def size(self) -> int:
        return SCALAR_SIZES[self.scalar] * self.lanes

    def with_lanes(self, lanes: int) -> IrType:
        return IrType(self.scalar, lanes)

    def mangle(self) -> str:
        """Short name used in runtime hook names, e.g. ``f64`` or ``v2f64``."""
        return f"v{self.lanes}{self.scalar}" if self.lanes > 1 else self.scalar

    def __str__(self) -> str:
        if self.lanes > 1:
            return f"<{self.lanes} x {self.scalar}>"
        return self.scalar


VOID = IrType("void")
I1, I8, I32, I64 = IrType("i1"), IrType("i8"), IrType("i32"), IrType("i64")
F32, F64, F128 = IrType("f32"), IrType("f64"), IrType("f128")
PTR = IrType("ptr")


@dataclass(frozen=True)
class SourceLoc:
    file: str
    line: int
    col: int = 0

    def __post_init__(self):
        if self.line < 1 or self.col < 0:
            raise ValueError("source locations are 1-based")

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col}" if self.col else f"{self.file}:{self.line}"


# -- values -------------------------------------------------------------------

@dataclass(frozen=True)
class Local:
    name: str
    type: IrType

    def __str__(self) -> str:
        return f"%{self.name}"


@dataclass(frozen=True)
class FuncRef:
    name: str
    type: IrType = PTR

    def __str__(self) -> str:
        return f"@{self.name}"


def _float_format(scalar: str) -> fp.Format:
    return fp.FORMATS[scalar]


def float_to_bits(scalar: str, x) -> int:
    if scalar == "f32":
        return fp.f32_to_bits(x)
    if scalar == "f64":
        return fp.f64_to_bits(x)
    return x.to_bits()


def bits_to_float(scalar: str, b: int):
    if scalar == "f32":
        return fp.bits_to_f32(b)
    if scalar == "f64":
        return fp.bits_to_f64(b)
    return Quad.from_bits(b)


@dataclass(frozen=True)
class Const:
    """A typed literal.

    Float lanes are held as raw bit patterns so that every literal, NaN
    payloads included, survives a print/parse round trip exactly.  Vector
    constants hold a tuple of lane payloads.
    """

    type: IrType
    payload: Union[int, tuple]

    @classmethod
    def of(cls, type: IrType, value) -> Const:
        """Build from runtime values (floats, ints or Quads, tuples for vectors)."""
        if type.is_vector:
            return cls(type, tuple(cls._lane(type.element, v) for v in value))
        return cls(type, cls._lane(type, value))

    @staticmethod
    def _lane(t: IrType, v) -> int:
        if t.is_float:
            if t.scalar == "f128" and not isinstance(v, Quad):
                v = Quad.from_float(v)
            return float_to_bits(t.scalar, v)
        return int(v)

    @property
    def value(self):
        """The runtime value (float, int, Quad or tuple)."""
        if self.type.is_vector:
            el = self.type.element
            return tuple(_lane_value(el, p) for p in self.payload)
        return _lane_value(self.type, self.payload)

    def __str__(self) -> str:
        from .printer import format_const
        return format_const(self)


def _lane_value(t: IrType, p: int):
    if t.is_float:
        return bits_to_float(t.scalar, p)
    return p


def normalize_int(scalar: str, v: int) -> int:
    """Wrap ``v`` into the signed range of an integer scalar (``i1`` stays 0/1)."""
    bits = INT_BITS[scalar]
    if bits == 1:
        return v & 1
    v &= (1 << bits) - 1
    return v - (1 << bits) if v >> (bits - 1) else v


Value = Union[Local, Const, FuncRef]


# -- instructions ---------------------------------------------------------------

BINARY_FP = ("fadd", "fsub", "fmul", "fdiv")
BINARY_INT = ("add", "sub", "mul", "sdiv")
CASTS = ("fpext", "fptrunc", "sitofp", "fptosi", "bitcast")
TERMINATORS = ("br", "condbr", "ret", "unreachable")
FCMP_PREDS = ("oeq", "one", "olt", "ole", "ogt", "oge", "ord", "uno")
ICMP_PREDS = ("eq", "ne", "slt", "sle", "sgt", "sge", "ult", "ule", "ugt", "uge")

OPCODES = (
    BINARY_FP + ("fneg", "fcmp") + CASTS
    + ("select", "extractelement", "insertelement", "shufflevector",
       "load", "store", "alloca", "ptradd", "icmp")
    + BINARY_INT + ("call", "phi", "memcpy", "memset") + TERMINATORS
)


@dataclass
class Instruction:
    opcode: str
    operands: list = field(default_factory=list)
    result: str | None = None
    type: IrType | None = None
    pred: str | None = None
    targets: list = field(default_factory=list)
    alloc_type: IrType | None = None
    loc: SourceLoc | None = None

    @property
    def is_terminator(self) -> bool:
        return self.opcode in TERMINATORS

    @property
    def value(self) -> Local | None:
        if self.result is None:
            return None
        return Local(self.result, self.type)

    @property
    def callee(self) -> Value:
        return self.operands[0]

    @property
    def args(self) -> list:
        return self.operands[1:]

    def incoming(self) -> list[tuple[Value, str]]:
        return list(zip(self.operands, self.targets))


@dataclass
class Block:
    label: str
    instructions: list[Instruction] = field(default_factory=list)

    @property
    def terminator(self) -> Instruction | None:
        if self.instructions and self.instructions[-1].is_terminator:
            return self.instructions[-1]
        return None

    def successors(self) -> list[str]:
        t = self.terminator
        return list(t.targets) if t is not None and t.opcode in ("br", "condbr") else []

    def phis(self) -> Iterator[Instruction]:
        for inst in self.instructions:
            if inst.opcode != "phi":
                break
            yield inst


@dataclass
class Function:
    name: str
    params: list[tuple[str, IrType]] = field(default_factory=list)
    ret: IrType = VOID
    blocks: list[Block] = field(default_factory=list)
    attrs: frozenset = frozenset()

    @property
    def is_declaration(self) -> bool:
        return "external" in self.attrs

    @property
    def instrumented(self) -> bool:
        return "noinstrument" not in self.attrs and not self.is_declaration

    @property
    def param_types(self) -> list[IrType]:
        return [t for _, t in self.params]

    def block(self, label: str) -> Block:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def instructions(self) -> Iterator[Instruction]:
        for b in self.blocks:
            yield from b.instructions

    def predecessors(self) -> dict[str, list[str]]:
        preds: dict[str, list[str]] = {b.label: [] for b in self.blocks}
        for b in self.blocks:
            for s in b.successors():
                if s in preds and b.label not in preds[s]:
                    preds[s].append(b.label)
        return preds


@dataclass
class Module:
    functions: list[Function] = field(default_factory=list)
    source_filename: str | None = None
    flags: frozenset = frozenset()

    def get(self, name: str) -> Function | None:
        for f in self.functions:
            if f.name == name:
                return f
        return None

    def __getitem__(self, name: str) -> Function:
        f = self.get(name)
        if f is None:
            raise KeyError(name)
        return f


def is_nan_bits(scalar: str, bits: int) -> bool:
    x = bits_to_float(scalar, bits)
    if isinstance(x, Quad):
        return x.is_nan()
    return math.isnan(x)
