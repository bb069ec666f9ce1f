"""Translation of IR functions into Python source.

Each defined function becomes one Python function whose locals are the SSA
values (``v0``, ``v1``...).  Blocks are numbered and dispatched from a
``while True`` loop; a block that branches to itself gets an inner loop so
tight single-block loops skip the dispatch chain.  Phis become parallel
assignments on the incoming edges.

The translation is ahead of time and purely syntactic: every instruction
maps to a fixed Python expression over helpers held in the module
namespace (``R`` rounds to binary32, ``LD3`` loads one type, and so on), so
the semantics live in those helpers and in this file's expression tables.
"""

from __future__ import annotations

import array
import math
import re
import struct
from typing import Callable

from .. import fp
from ..extended import Quad, fdiv
from ..ir.core import INT_BITS, SCALAR_SIZES, Const, FuncRef, Function, IrType, Local, Module
from ..runtime.memory import BASE, TYPE_SEQ, Trap

M64 = (1 << 64) - 1

_FSYM = {"fadd": "+", "fsub": "-", "fmul": "*", "fdiv": "/"}
_ISYM = {"add": "+", "sub": "-", "mul": "*"}
_FCMP = {
    "oeq": "({a} == {b})",
    "one": "({a} < {b} or {a} > {b})",
    "olt": "({a} < {b})",
    "ole": "({a} <= {b})",
    "ogt": "({a} > {b})",
    "oge": "({a} >= {b})",
    "ord": "({a} == {a} and {b} == {b})",
    "uno": "({a} != {a} or {b} != {b})",
}
_ICMP_SIGNED = {"eq": "==", "ne": "!=", "slt": "<", "sle": "<=", "sgt": ">", "sge": ">="}
_ICMP_UNSIGNED = {"ult": "<", "ule": "<=", "ugt": ">", "uge": ">="}
_STRUCT_CODE = {"i1": "B", "i8": "b", "i32": "i", "i64": "q", "ptr": "Q", "f32": "f", "f64": "d"}
# ops that can trap or observe the frame's location
_LOCATED = {"load", "store", "alloca", "sdiv", "memcpy", "memset", "call", "unreachable",
            "extractelement", "insertelement"}


# -- helpers referenced by generated code ------------------------------------

def trap(msg: str):
    raise Trap(msg)


def sdiv(a: int, b: int, bits: int) -> int:
    if b == 0:
        raise Trap("integer division by zero")
    if bits > 1 and a == -(1 << (bits - 1)) and b == -1:
        raise Trap("integer overflow in sdiv")
    q = abs(a) // abs(b)
    return -q if (a < 0) != (b < 0) else q


def fptosi(x, bits: int) -> int:
    """Truncate toward zero, saturating; NaN gives 0."""
    if isinstance(x, Quad):
        if x.is_nan():
            return 0
        v = x.to_int() if x.is_finite() else (-(1 << 80) if x.neg else 1 << 80)
    else:
        if x != x:
            return 0
        v = int(x) if math.isfinite(x) else (-(1 << 80) if x < 0 else 1 << 80)
    if bits == 1:
        return 1 if v else 0
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return lo if v < lo else hi if v > hi else v


def itof32(v: int) -> float:
    return fp.int_to_float(v, fp.BINARY32)


def vget(v: tuple, i: int):
    if not 0 <= i < len(v):
        raise Trap(f"vector index {i} out of range")
    return v[i]


def vset(v: tuple, e, i: int) -> tuple:
    if not 0 <= i < len(v):
        raise Trap(f"vector index {i} out of range")
    return v[:i] + (e,) + v[i + 1:]


def to_bytes(t: IrType, v) -> bytes:
    if t.scalar == "f128":
        lanes = v if t.is_vector else (v,)
        return b"".join(q.to_bytes() for q in lanes)
    st = struct.Struct(f"<{t.lanes}{_STRUCT_CODE[t.scalar]}")
    vals = v if t.is_vector else (v,)
    if t.scalar == "ptr":
        vals = [x & M64 for x in vals]
    return st.pack(*vals)


def from_bytes(t: IrType, raw: bytes):
    if t.scalar == "f128":
        lanes = tuple(Quad.from_bytes(raw[16 * i:16 * i + 16]) for i in range(t.lanes))
    else:
        lanes = struct.unpack(f"<{t.lanes}{_STRUCT_CODE[t.scalar]}", raw)
        if t.scalar == "i1":
            lanes = tuple(x & 1 for x in lanes)
    return lanes if t.is_vector else lanes[0]


def make_bitcast(src: IrType, dst: IrType) -> Callable:
    return lambda v: from_bytes(dst, to_bytes(src, v))


_UNPACK = {k: struct.Struct("<" + c).unpack_from for k, c in _STRUCT_CODE.items() if k != "i1"}


def bad_load(p: int, size: int):
    raise Trap(f"invalid load of {size} bytes at 0x{p:x}")


def make_loader(arena, t: IrType) -> Callable:
    data, live, size = arena.data, arena.live, t.size

    def bad(p):
        raise Trap(f"invalid load of {size} bytes at 0x{p:x}")

    if t.scalar == "f128" or t.scalar == "i1":
        def ld(p):
            if p < BASE or live.count(1, p, p + size) != size:
                bad(p)
            return from_bytes(t, bytes(data[p:p + size]))
        return ld
    st = struct.Struct(f"<{t.lanes}{_STRUCT_CODE[t.scalar]}")
    unpack = st.unpack_from
    if t.is_vector:
        def ld(p):
            if p < BASE or live.count(1, p, p + size) != size:
                bad(p)
            return unpack(data, p)
    else:
        def ld(p):
            if p < BASE or live.count(1, p, p + size) != size:
                bad(p)
            return unpack(data, p)[0]
    return ld


def make_storer(arena, t: IrType) -> Callable:
    data, live, size = arena.data, arena.live, t.size

    def bad(p):
        raise Trap(f"invalid store of {size} bytes at 0x{p:x}")

    if t.scalar in ("f128", "i1", "ptr"):
        def st_(p, v):
            if p < BASE or live.count(1, p, p + size) != size:
                bad(p)
            data[p:p + size] = to_bytes(t, v)
        return st_
    pack = struct.Struct(f"<{t.lanes}{_STRUCT_CODE[t.scalar]}").pack_into
    if t.is_vector:
        def st_(p, v):
            if p < BASE or live.count(1, p, p + size) != size:
                bad(p)
            pack(data, p, *v)
    else:
        def st_(p, v):
            if p < BASE or live.count(1, p, p + size) != size:
                bad(p)
            pack(data, p, v)
    return st_


BASE_HELPERS = {
    "W32": array.array("f", [0.0]),
    "R": fp.round_f32, "Q": Quad, "ext": Quad.from_float, "fdiv": fdiv,
    "trap": trap, "sdiv": sdiv, "fptosi": fptosi, "itof32": itof32,
    "vget": vget, "vset": vset, "Trap": Trap,
}


# -- expression tables ---------------------------------------------------------

def float_binop(op: str, scalar: str, a: str, b: str) -> str:
    if scalar == "f128":
        return f"({a} {_FSYM[op]} {b})"
    if op == "fdiv":
        e = f"({a} / {b} if {b} else fdiv({a}, {b}))"
    else:
        e = f"({a} {_FSYM[op]} {b})"
    return f"R{e}" if scalar == "f32" else e


def int_wrap(bits: int, e: str) -> str:
    if bits == 1:
        return f"(({e}) & 1)"
    half = 1 << (bits - 1)
    return f"((({e}) + {half}) & {(1 << bits) - 1}) - {half}"


def int_binop(op: str, scalar: str, a: str, b: str) -> str:
    bits = INT_BITS[scalar]
    if op == "sdiv":
        return f"sdiv({a}, {b}, {bits})"
    return f"({int_wrap(bits, f'{a} {_ISYM[op]} {b}')})"


def cast_expr(op: str, src: str, dst: str, a: str) -> str:
    """Per-lane expression for a numeric cast (not bitcast)."""
    if op == "fpext":
        return f"ext({a})" if dst == "f128" else a
    if op == "fptrunc":
        if src == "f128":
            return f"{a}.to_float()" if dst == "f64" else f"{a}.to_f32()"
        return f"R({a})"
    if op == "sitofp":
        if src == "i1":
            a = f"(-{a})"
        if dst == "f32":
            return f"itof32({a})"
        if dst == "f64":
            return f"float({a})"
        return f"Q.from_int({a})"
    if op == "fptosi":
        return f"fptosi({a}, {INT_BITS[dst]})"
    raise ValueError(op)


def icmp_expr(pred: str, scalar: str, a: str, b: str) -> str:
    if pred in _ICMP_SIGNED:
        if scalar == "i1" and pred not in ("eq", "ne"):
            a, b = f"(-{a})", f"(-{b})"
        return f"({a} {_ICMP_SIGNED[pred]} {b})"
    if scalar == "ptr":
        return f"({a} {_ICMP_UNSIGNED[pred]} {b})"
    mask = (1 << INT_BITS[scalar]) - 1
    return f"(({a} & {mask}) {_ICMP_UNSIGNED[pred]} ({b} & {mask}))"


# -- module translation ----------------------------------------------------------

class CompiledModule:
    """Generated source plus the namespace it runs in."""

    def __init__(self, source: str, namespace: dict, entry_points: dict[str, Callable], fn_ids: dict[str, int]):
        self.source = source
        self.namespace = namespace
        self.functions = entry_points
        self.fn_ids = fn_ids


class ModuleCodegen:
    def __init__(self, module: Module, fn_ids: dict[str, int], arena,
                 resolve_external: Callable[[Function], Callable],
                 push: Callable, pop: Callable, runtime=None):
        self.module = module
        self.runtime = runtime
        self.fn_ids = fn_ids
        self.arena = arena
        self.resolve_external = resolve_external
        self.ns: dict = dict(BASE_HELPERS)
        self.ns.update(
            A_alloca=arena.alloca, A_release=arena.release, A=arena,
            A_memcpy=arena.memcpy, A_memset=arena.memset,
            S_push=push, S_pop=pop, DATA=arena.data, LIVE=arena.live, BADLD=bad_load,
        )
        if runtime is not None:
            self.ns.update(
                TYPES=runtime.shadow.types, VALS=runtime.shadow.values,
                SEQ_f32=TYPE_SEQ["f32"], SEQ_f64=TYPE_SEQ["f64"], ZERO_f32=bytes(4), ZERO_f64=bytes(8),
                UPD=_UNPACK["f64"], QFB=Quad.from_bytes,
            )
        self._interned: dict = {}
        self.fn_names = {f.name: f"F{i}" for i, f in enumerate(module.functions)}

    def intern(self, prefix: str, key, make: Callable):
        name = self._interned.get((prefix, key))
        if name is None:
            name = f"{prefix}{len(self._interned)}"
            self._interned[(prefix, key)] = name
            self.ns[name] = make()
        return name

    def const(self, c: Const) -> str:
        t = c.type
        if not t.is_vector:
            if t.scalar in ("f32", "f64"):
                x = c.value
                if math.isfinite(x):
                    return f"({x!r})"
            elif not t.is_float:
                return str(c.payload)
        return self.intern("C", (t, c.payload), lambda: c.value)

    def loader(self, t: IrType) -> str:
        return self.intern("LD", t, lambda: make_loader(self.arena, t))

    def storer(self, t: IrType) -> str:
        return self.intern("ST", t, lambda: make_storer(self.arena, t))

    def bitcaster(self, src: IrType, dst: IrType) -> str:
        return self.intern("BC", (src, dst), lambda: make_bitcast(src, dst))

    def fused_load(self, vtype: str) -> str:
        return self.intern("SLX", vtype, lambda: self.runtime.load_or_extend(vtype))

    def unpacker(self, scalar: str) -> str:
        return self.intern("UP", scalar, lambda: _UNPACK[scalar])

    def loc(self, loc) -> str:
        return self.intern("L", loc, lambda: loc)

    def compile(self) -> CompiledModule:
        chunks = []
        for i, fn in enumerate(self.module.functions):
            name = self.fn_names[fn.name]
            if fn.is_declaration:
                self.ns[name] = self.resolve_external(fn)
            else:
                self.ns[f"N{i}"] = fn.name
                chunks.append(_FunctionCodegen(self, fn, i).generate())
        by_id = {}

        def icall(fid: int) -> Callable:
            f = by_id.get(fid)
            if f is None:
                raise Trap(f"indirect call through non-function pointer 0x{fid:x}")
            return f
        self.ns["icall"] = icall
        source = "\n\n".join(chunks) + "\n"
        code = compile(source, f"<nsan:{self.module.source_filename or 'module'}>", "exec")
        exec(code, self.ns)
        entry = {fn.name: self.ns[self.fn_names[fn.name]] for fn in self.module.functions}
        for fname, fid in self.fn_ids.items():
            if fname in entry:
                by_id[fid] = entry[fname]
        return CompiledModule(source, self.ns, entry, self.fn_ids)


_IDENT = re.compile(r"\b[A-Za-z_][A-Za-z0-9_]*\b")
_SHADOW_LOAD = re.compile(r"__nsan_shadow_load_valid_(f32|f64)")


class _FunctionCodegen:
    def __init__(self, unit: ModuleCodegen, fn: Function, index: int):
        self.unit = unit
        self.fn = fn
        self.index = index
        self.names: dict[str, str] = {}
        self.block_ids = {b.label: k for k, b in enumerate(fn.blocks)}
        self.has_alloca = any(i.opcode == "alloca" for i in fn.instructions())
        self.lines: list[str] = []
        self.cur_loc = None
        self.uses = self.count_uses()
        self.defs = {i.result: i for i in fn.instructions() if i.result is not None}

    def count_uses(self) -> dict[str, int]:
        uses: dict[str, int] = {}
        for inst in self.fn.instructions():
            for v in inst.operands:
                if isinstance(v, Local):
                    uses[v.name] = uses.get(v.name, 0) + 1
        return uses

    # naming

    def local(self, name: str) -> str:
        py = self.names.get(name)
        if py is None:
            py = self.names[name] = f"v{len(self.names)}"
        return py

    def val(self, v) -> str:
        if isinstance(v, Local):
            return self.local(v.name)
        if isinstance(v, Const):
            return self.unit.const(v)
        if isinstance(v, FuncRef):
            return str(self.unit.fn_ids[v.name])
        raise TypeError(f"not a value: {v!r}")

    def put(self, ind: int, text: str) -> None:
        self.lines.append("    " * ind + text)

    # function skeleton

    def generate(self) -> str:
        fn = self.fn
        params = ", ".join(self.local(n) for n, _ in fn.params)
        fid = self.unit.fn_ids[fn.name]
        self.put(1, f"F = [N{self.index}, None, {fid}]")
        self.put(1, "S_push(F)")
        if self.has_alloca:
            self.put(1, "mark = A.sp")
        blocks = fn.blocks
        if len(blocks) == 1 and not blocks[0].successors():
            self.block(blocks[0], 1, in_loop=False)
        else:
            self.put(1, "b = 0")
            self.put(1, "while True:")
            for k, blk in enumerate(blocks):
                self.put(2, f"{'if' if k == 0 else 'elif'} b == {k}:")
                if blk.label in blk.successors():
                    self.put(3, "while True:")
                    self.block(blk, 4, in_loop=True)
                else:
                    self.block(blk, 3, in_loop=False)
        body = self.lines
        if self.has_loop():
            body = self.alias_globals(body)
        return "\n".join([f"def {self.unit.fn_names[fn.name]}({params}):"] + body)

    def has_loop(self) -> bool:
        for k, blk in enumerate(self.fn.blocks):
            if any(self.block_ids.get(t, k + 1) <= k for t in blk.successors()):
                return True
        return False

    def alias_globals(self, body: list[str]) -> list[str]:
        """Bind the module globals a looping function uses to fast locals."""
        ns = self.unit.ns
        used = sorted({w for line in body for w in _IDENT.findall(line) if w in ns})
        if not used:
            return body
        rename = {w: f"g_{w}" for w in used}
        out = [f"    {', '.join(rename[w] for w in used)}, = {', '.join(used)},"]
        for line in body:
            out.append(_IDENT.sub(lambda m: rename.get(m.group(0), m.group(0)), line))
        return out

    def block(self, blk, ind: int, in_loop: bool) -> None:
        self.cur_loc = object()  # unknown: the first located op always sets it
        insts = [i for i in blk.instructions if i.opcode != "phi"]
        k = 0
        while k < len(insts):
            inst = insts[k]
            if inst.opcode in _LOCATED and inst.loc != self.cur_loc:
                self.put(ind, f"F[1] = {self.unit.loc(inst.loc) if inst.loc else 'None'}")
                self.cur_loc = inst.loc
            fused = self.fused_shadow_load(insts, k)
            if fused:
                for line in fused:
                    self.put(ind, line)
                k += 4
                continue
            if inst.is_terminator:
                self.terminator(blk, inst, ind, in_loop)
            else:
                for line in self.statement(inst):
                    self.put(ind, line)
            k += 1

    def fused_shadow_load(self, insts: list, k: int) -> list[str] | None:
        """Collapse ``valid / shadow_load / fpext / select`` into one call."""
        if self.unit.runtime is None or k + 3 >= len(insts):
            return None
        a, b, c, d = insts[k:k + 4]
        if not (a.opcode == "call" and isinstance(a.callee, FuncRef)):
            return None
        m = _SHADOW_LOAD.fullmatch(a.callee.name)
        if not m:
            return None
        vtype = m.group(1)
        ptr = a.args[0]
        ok = (
            b.opcode == "call" and isinstance(b.callee, FuncRef)
            and b.callee.name == f"__nsan_shadow_load_{vtype}" and b.args == [ptr]
            and c.opcode == "fpext" and d.opcode == "select"
            and d.operands == [a.value, b.value, c.value]
            and all(self.uses.get(x.result, 0) == 1 for x in (a, b, c))
        )
        if not ok:
            return None
        fn = self.unit.fused_load(vtype)
        x_val = c.operands[0]
        p, x, res = self.val(ptr), self.val(x_val), self.local(d.result)
        n = SCALAR_SIZES[vtype]
        fast = f"UPD(VALS, 2 * {p})[0]" if vtype == "f32" else f"QFB(VALS[2 * {p}:2 * {p} + 16])"
        src = self.defs.get(x_val.name) if isinstance(x_val, Local) else None
        if src is None or src.opcode != "load" or src.operands[0] != ptr:
            return [f"if {p} >= {BASE} and TYPES[{p}:{p} + {n}] == SEQ_{vtype}: {res} = {fast}",
                    f"else: {res} = {fn}({p}, {x})"]
        # the application load of the same address already proved it live
        ext = x if vtype == "f32" else f"ext({x})"
        return [f"t_ = TYPES[{p}:{p} + {n}]",
                f"if t_ == SEQ_{vtype}: {res} = {fast}",
                f"elif t_ == ZERO_{vtype}: {res} = {ext}",
                f"else: {res} = {fn}({p}, {x})"]

    def edge(self, src: str, dst: str, ind: int, in_loop: bool) -> None:
        target = self.fn.block(dst)
        lhs, rhs = [], []
        for phi in target.phis():
            for v, lbl in phi.incoming():
                if lbl == src:
                    lhs.append(self.local(phi.result))
                    rhs.append(self.val(v))
                    break
        if lhs:
            self.put(ind, f"{', '.join(lhs)} = {', '.join(rhs)}")
        if in_loop and dst == src:
            self.put(ind, "continue")
            return
        self.put(ind, f"b = {self.block_ids[dst]}")
        if in_loop:
            self.put(ind, "break")

    def terminator(self, blk, inst, ind: int, in_loop: bool) -> None:
        op = inst.opcode
        if op == "br":
            self.edge(blk.label, inst.targets[0], ind, in_loop)
        elif op == "condbr":
            self.put(ind, f"if {self.val(inst.operands[0])}:")
            self.edge(blk.label, inst.targets[0], ind + 1, in_loop)
            self.put(ind, "else:")
            self.edge(blk.label, inst.targets[1], ind + 1, in_loop)
        elif op == "ret":
            if self.has_alloca:
                self.put(ind, "A_release(mark)")
            self.put(ind, "S_pop()")
            self.put(ind, f"return {self.val(inst.operands[0])}" if inst.operands else "return None")
        else:
            self.put(ind, "trap('unreachable executed')")

    # instructions

    def statement(self, inst) -> list[str]:
        op, t = inst.opcode, inst.type
        if inst.result is not None and t is not None and not t.is_vector:
            res = self.local(inst.result)
            if op in ("fadd", "fsub", "fmul") and t.scalar == "f32":
                # round through a float32 cell: no call on the hot path
                a, b = (self.val(x) for x in inst.operands)
                return [f"W32[0] = {a} {_FSYM[op]} {b}", f"{res} = W32[0]"]
            if op == "load" and t.scalar in _UNPACK:
                p, n = self.val(inst.operands[0]), t.size
                return [f"if {p} < {BASE} or LIVE.count(1, {p}, {p} + {n}) != {n}: BADLD({p}, {n})",
                        f"{res} = {self.unit.unpacker(t.scalar)}(DATA, {p})[0]"]
            if op in _ISYM and t.scalar != "i1":
                a, b = (self.val(x) for x in inst.operands)
                half = 1 << (INT_BITS[t.scalar] - 1)
                return [f"{res} = {a} {_ISYM[op]} {b}",
                        f"if not -{half} <= {res} < {half}: {res} = (({res} + {half}) & {2 * half - 1}) - {half}"]
        expr = self.expression(inst)
        if inst.result is None:
            return [expr]
        return [f"{self.local(inst.result)} = {expr}"]

    def lanewise(self, t: IrType, template: Callable[..., str], *operands: str) -> str:
        if not t.is_vector:
            return template(*operands)
        names = ["x_", "y_", "z_"][:len(operands)]
        inner = template(*names)
        if len(operands) == 1:
            return f"tuple({inner} for x_ in {operands[0]})"
        return f"tuple({inner} for {', '.join(names)} in zip({', '.join(operands)}))"

    def expression(self, inst) -> str:
        op, ops, u = inst.opcode, inst.operands, self.unit
        v = [self.val(x) for x in ops] if op != "call" else None
        if op in _FSYM:
            s = inst.type.scalar
            return self.lanewise(inst.type, lambda a, b: float_binop(op, s, a, b), *v)
        if op in _ISYM or op == "sdiv":
            s = inst.type.scalar
            return self.lanewise(inst.type, lambda a, b: int_binop(op, s, a, b), *v)
        if op == "fneg":
            return self.lanewise(inst.type, lambda a: f"(-{a})", *v)
        if op == "fcmp":
            return _FCMP[inst.pred].format(a=v[0], b=v[1])
        if op == "icmp":
            return icmp_expr(inst.pred, ops[0].type.scalar, v[0], v[1])
        if op == "bitcast":
            if ops[0].type == inst.type:
                return v[0]
            return f"{u.bitcaster(ops[0].type, inst.type)}({v[0]})"
        if op in ("fpext", "fptrunc", "sitofp", "fptosi"):
            src, dst = ops[0].type.scalar, inst.type.scalar
            return self.lanewise(inst.type, lambda a: cast_expr(op, src, dst, a), v[0])
        if op == "select":
            return f"({v[1]} if {v[0]} else {v[2]})"
        if op == "extractelement":
            if isinstance(ops[1], Const):
                return f"{v[0]}[{ops[1].value}]"
            return f"vget({v[0]}, {v[1]})"
        if op == "insertelement":
            if isinstance(ops[2], Const):
                k = ops[2].value
                return f"({v[0]}[:{k}] + ({v[1]},) + {v[0]}[{k + 1}:])"
            return f"vset({v[0]}, {v[1]}, {v[2]})"
        if op == "shufflevector":
            n = ops[0].type.lanes
            parts = [f"{v[0]}[{k}]" if k < n else f"{v[1]}[{k - n}]" for k in ops[2].value]
            return "(" + ", ".join(parts) + ",)"
        if op == "load":
            return f"{u.loader(inst.type)}({v[0]})"
        if op == "store":
            return f"{u.storer(ops[0].type)}({v[1]}, {v[0]})"
        if op == "alloca":
            t = inst.alloc_type
            align = min(16, SCALAR_SIZES[t.scalar])
            size = str(t.size) if not ops else f"{t.size} * {v[0]}"
            return f"A_alloca({size}, {align})"
        if op == "ptradd":
            return f"(({v[0]} + {v[1]}) & {M64})"
        if op == "memcpy":
            return f"A_memcpy({v[0]}, {v[1]}, {v[2]})"
        if op == "memset":
            return f"A_memset({v[0]}, {v[1]}, {v[2]})"
        if op == "call":
            args = ", ".join(self.val(a) for a in inst.args)
            callee = inst.callee
            if isinstance(callee, FuncRef):
                return f"{u.fn_names[callee.name]}({args})"
            return f"icall({self.val(callee)})({args})"
        raise ValueError(f"cannot translate opcode {op!r}")
