"""Canonical text form of a module.

Float literals are always written as hexadecimal floats (or raw bit patterns
for NaNs), so ``parse(print(m))`` reproduces every constant bit for bit.
"""

from __future__ import annotations

import math

from .. import fp
from ..extended import Quad
from .core import (
    BINARY_FP, BINARY_INT, CASTS, Const, FuncRef, Function, Instruction, IrType,
    Local, Module, SourceLoc, bits_to_float,
)


def _float_lane(scalar: str, bits: int) -> str:
    x = bits_to_float(scalar, bits)
    width = fp.FORMATS[scalar].width * 2
    if isinstance(x, Quad):
        if x.is_nan():
            return f"0x{bits:0{width}x}"
        return x.hex()
    if math.isnan(x) or (scalar == "f32" and fp.f32_to_bits(x) != bits):
        return f"0x{bits:0{width}x}"
    return fp.hex_float(x)


def _lane(t: IrType, payload: int) -> str:
    if t.is_float:
        return _float_lane(t.scalar, payload)
    if t.scalar == "i1":
        return "true" if payload else "false"
    if t.is_ptr and payload == 0:
        return "null"
    return str(payload)


def format_const(c: Const) -> str:
    if c.type.is_vector:
        el = c.type.element
        return "<" + ", ".join(f"{el} {_lane(el, p)}" for p in c.payload) + ">"
    return _lane(c.type, c.payload)


def format_value(v) -> str:
    if isinstance(v, Const):
        return format_const(v)
    return str(v)


def typed(v) -> str:
    return f"{v.type} {format_value(v)}"


def format_loc(loc: SourceLoc, default_file: str | None) -> str:
    pos = f"{loc.line}:{loc.col}" if loc.col else str(loc.line)
    if loc.file == default_file:
        return f"!loc {pos}"
    escaped = loc.file.replace("\\", "\\\\").replace('"', '\\"')
    return f'!loc "{escaped}":{pos}'


def format_instruction(inst: Instruction, default_file: str | None = None) -> str:
    op = inst.opcode
    ops = inst.operands
    lhs = f"%{inst.result} = " if inst.result is not None else ""
    if op in BINARY_FP or op in BINARY_INT:
        body = f"{op} {inst.type} {format_value(ops[0])}, {format_value(ops[1])}"
    elif op == "fneg":
        body = f"fneg {typed(ops[0])}"
    elif op in ("fcmp", "icmp"):
        body = f"{op} {inst.pred} {ops[0].type} {format_value(ops[0])}, {format_value(ops[1])}"
    elif op in CASTS:
        body = f"{op} {typed(ops[0])} to {inst.type}"
    elif op in ("select", "extractelement", "insertelement", "shufflevector",
                "store", "ptradd", "memcpy", "memset"):
        body = f"{op} " + ", ".join(typed(v) for v in ops)
    elif op == "load":
        body = f"load {inst.type}, {typed(ops[0])}"
    elif op == "alloca":
        body = f"alloca {inst.alloc_type}"
        if ops:
            body += f", {typed(ops[0])}"
    elif op == "call":
        args = ", ".join(typed(a) for a in inst.args)
        body = f"call {inst.type} {format_value(inst.callee)}({args})"
    elif op == "phi":
        inc = ", ".join(f"[ {format_value(v)}, %{lbl} ]" for v, lbl in inst.incoming())
        body = f"phi {inst.type} {inc}"
    elif op == "br":
        body = f"br label %{inst.targets[0]}"
    elif op == "condbr":
        body = f"condbr {typed(ops[0])}, label %{inst.targets[0]}, label %{inst.targets[1]}"
    elif op == "ret":
        body = f"ret {typed(ops[0])}" if ops else "ret void"
    elif op == "unreachable":
        body = "unreachable"
    else:
        raise ValueError(f"cannot print opcode {op!r}")
    text = lhs + body
    if inst.loc is not None:
        text += " " + format_loc(inst.loc, default_file)
    return text


def format_function(fn: Function, default_file: str | None = None) -> str:
    attrs = "".join(f" {a}" for a in sorted(fn.attrs - {"external"}))
    if fn.is_declaration:
        params = ", ".join(str(t) for t in fn.param_types)
        return f"declare {fn.ret} @{fn.name}({params}){attrs}\n"
    params = ", ".join(f"{t} %{n}" for n, t in fn.params)
    lines = [f"define {fn.ret} @{fn.name}({params}){attrs} {{"]
    for b in fn.blocks:
        lines.append(f"{b.label}:")
        for inst in b.instructions:
            lines.append("  " + format_instruction(inst, default_file))
    lines.append("}")
    return "\n".join(lines) + "\n"


def print_module(m: Module) -> str:
    out = []
    if m.source_filename is not None:
        out.append(f'source_filename = "{m.source_filename}"\n')
    for flag in sorted(m.flags):
        out.append(f'module_flag "{flag}"\n')
    if out:
        out.append("")
    chunks = [format_function(f, m.source_filename) for f in m.functions]
    return "\n".join(out) + "\n".join(chunks)
