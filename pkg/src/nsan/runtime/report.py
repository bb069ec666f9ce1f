"""Warning events and their text form.

A value warning looks like this (columns are fixed)::

    WARNING: NumericalSanitizer: inconsistent shadow results while checking store to address 0x10008
    double       precision  (native): dec: 0.00000000000002309503  hex: 0x1.a00b086c4888fp-46
    __float128   precision  (shadow): dec: 0.00000000000005877381  hex: 0x1.08b1968a637df0f4p-44
    shadow truncated to double      : dec: 0.00000000000005877381  hex: 0x1.08b1968a637dfp-44
    Relative error: 60.70%
        #0 0x1010 in Example type_punning.c:6:10
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..fp import hex_float
from ..extended import ABS_ONLY, ErrorClass, Quad, format_percent
from ..ir.core import SourceLoc


class CheckKind(enum.IntEnum):
    STORE = 0
    RET = 1
    ARG = 2
    FCMP = 3
    EXPLICIT = 4
    LOAD = 5

    @property
    def label(self) -> str:
        return _KIND_LABELS[self]


_KIND_LABELS = {
    CheckKind.STORE: "store",
    CheckKind.RET: "ret",
    CheckKind.ARG: "arg",
    CheckKind.FCMP: "fcmp",
    CheckKind.EXPLICIT: "explicit-check",
    CheckKind.LOAD: "load",
}
KIND_BY_LABEL = {v: k for k, v in _KIND_LABELS.items()}

NATIVE_LABEL = {"f32": "float", "f64": "double"}
SHADOW_LABEL = {"f32": "double", "f64": "__float128"}


@dataclass(frozen=True)
class Frame:
    index: int
    function: str
    address: int
    loc: SourceLoc | None

    def __str__(self) -> str:
        where = str(self.loc) if self.loc is not None else "<unknown>"
        return f"    #{self.index} 0x{self.address:x} in {self.function} {where}"


def capture_stack(frames) -> list[Frame]:
    """Innermost-first snapshot of interpreter frames ``[name, loc, id]``."""
    out = []
    for i, fr in enumerate(reversed(frames)):
        out.append(Frame(i, fr[0], fr[2], fr[1]))
    return out


@dataclass
class WarningEvent:
    kind: CheckKind
    vtype: str
    value: object = None
    shadow: object = None
    truncated: float | None = None
    error: float | ErrorClass | None = None
    address: int | None = None
    stack: list[Frame] = field(default_factory=list)
    suppressed: bool = False
    count: int = 1
    # comparison warnings only
    pred: str | None = None
    operands: tuple = ()
    results: tuple = ()

    @property
    def loc(self) -> SourceLoc | None:
        return self.stack[0].loc if self.stack else None

    @property
    def function(self) -> str | None:
        return self.stack[0].function if self.stack else None

    @property
    def site(self) -> tuple:
        return (self.kind, self.loc)

    @property
    def percent(self) -> str:
        return format_percent(self.error) if self.error is not None else ""


@dataclass(frozen=True)
class ResumeEvent:
    """A shadow replaced by the extension of its application value."""

    reason: str  # "load", "bitcast", "call", "suppression", "load-mismatch"
    function: str | None
    loc: SourceLoc | None


def _dec(x) -> str:
    if isinstance(x, Quad):
        return x.fixed(20)
    if x != x or x in (float("inf"), float("-inf")):
        return str(x)
    return f"{x:.20f}"


def _hex(x) -> str:
    return x.hex() if isinstance(x, Quad) else hex_float(x)


def _value_line(label: str, x) -> str:
    return f"{label:<32}: dec: {_dec(x)}  hex: {_hex(x)}"


def _header(w: WarningEvent) -> str:
    if w.kind == CheckKind.FCMP:
        return "floating-point comparison results depend on precision"
    if w.kind == CheckKind.EXPLICIT:
        return "inconsistent shadow results in explicit check"
    what = {
        CheckKind.STORE: "store",
        CheckKind.LOAD: "load",
        CheckKind.RET: "return value",
        CheckKind.ARG: "call argument",
    }[w.kind]
    text = f"inconsistent shadow results while checking {what}"
    if w.address is not None:
        text += f" {'to' if w.kind == CheckKind.STORE else 'from'} address 0x{w.address:x}"
    return text


def format_warning(w: WarningEvent) -> str:
    lines = [f"WARNING: NumericalSanitizer: {_header(w)}"]
    native = f"{NATIVE_LABEL[w.vtype]:<13}precision  (native)"
    shadow = f"{SHADOW_LABEL[w.vtype]:<13}precision  (shadow)"
    if w.kind == CheckKind.FCMP:
        a, b, sa, sb = w.operands
        ra, rs = (str(r).lower() for r in w.results)
        lines.append(f"{native}: {_dec(a)} {w.pred} {_dec(b)} -> {ra}  hex: {_hex(a)} {w.pred} {_hex(b)}")
        lines.append(f"{shadow}: {_dec(sa)} {w.pred} {_dec(sb)} -> {rs}  hex: {_hex(sa)} {w.pred} {_hex(sb)}")
    else:
        lines.append(_value_line(native, w.value))
        lines.append(_value_line(shadow, w.shadow))
        lines.append(_value_line(f"shadow truncated to {NATIVE_LABEL[w.vtype]}", w.truncated))
        if w.error is ABS_ONLY:
            lines.append(f"Relative error: {w.percent} (absolute error {abs(w.value - w.truncated):.6g})")
        else:
            lines.append(f"Relative error: {w.percent}")
    lines.extend(str(fr) for fr in w.stack)
    return "\n".join(lines) + "\n"
