"""Structural and type checks for modules."""

from __future__ import annotations

from dataclasses import dataclass

from .core import (
    BINARY_FP, BINARY_INT, CASTS, I1, I64, Const, FuncRef, Function, Instruction,
    IrType, Local, Module, SourceLoc,
)


@dataclass(frozen=True)
class Diagnostic:
    message: str
    function: str | None = None
    block: str | None = None
    loc: SourceLoc | None = None

    def __str__(self) -> str:
        where = f"{self.loc}: " if self.loc else ""
        ctx = f" (in @{self.function}" + (f", block {self.block})" if self.block else ")") if self.function else ""
        return f"{where}{self.message}{ctx}"


class VerifyError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        super().__init__("\n".join(str(d) for d in diagnostics))
        self.diagnostics = diagnostics


def verify_module(m: Module) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    seen: set[str] = set()
    for fn in m.functions:
        if fn.name in seen:
            diags.append(Diagnostic(f"duplicate function name @{fn.name}", fn.name))
        seen.add(fn.name)
    for fn in m.functions:
        if not fn.is_declaration:
            _FunctionVerifier(m, fn, diags).run()
    return diags


def check_module(m: Module) -> None:
    diags = verify_module(m)
    if diags:
        raise VerifyError(diags)


class _FunctionVerifier:
    def __init__(self, module: Module, fn: Function, diags: list[Diagnostic]):
        self.module = module
        self.fn = fn
        self.diags = diags
        self.block: str | None = None

    def error(self, message: str, inst: Instruction | None = None) -> None:
        self.diags.append(Diagnostic(message, self.fn.name, self.block, inst.loc if inst else None))

    def run(self) -> None:
        fn = self.fn
        if not fn.blocks:
            self.error("function definition has no blocks")
            return
        labels = [b.label for b in fn.blocks]
        if len(set(labels)) != len(labels):
            self.error("duplicate block labels")
        self.labels = set(labels)
        # definitions: name -> (type, block label or None for params, index)
        self.defs: dict[str, tuple[IrType, str | None, int]] = {}
        for name, ty in fn.params:
            if name in self.defs:
                self.error(f"duplicate SSA name %{name}")
            self.defs[name] = (ty, None, -1)
        for b in fn.blocks:
            for i, inst in enumerate(b.instructions):
                if inst.result is not None:
                    if inst.result in self.defs:
                        self.block = b.label
                        self.error(f"duplicate SSA name %{inst.result}", inst)
                    self.defs[inst.result] = (inst.type, b.label, i)
        self.preds = fn.predecessors()
        self.dom = _dominators(fn, self.preds)
        entry = fn.blocks[0].label
        if self.preds.get(entry):
            self.block = entry
            self.error("entry block must not have predecessors")
        for b in fn.blocks:
            self.block = b.label
            self.check_block(b)
        self.block = None

    # -- per block ----------------------------------------------------------

    def check_block(self, b) -> None:
        insts = b.instructions
        if not insts or not insts[-1].is_terminator:
            self.error("missing terminator")
        seen_non_phi = False
        for i, inst in enumerate(insts):
            if inst.is_terminator and i != len(insts) - 1:
                self.error(f"terminator {inst.opcode} in the middle of a block", inst)
            if inst.opcode == "phi":
                if seen_non_phi:
                    self.error("phi nodes must come first in a block", inst)
            else:
                seen_non_phi = True
            self.check_operand_refs(b, i, inst)
            self.check_instruction(b, inst)

    def check_operand_refs(self, b, idx: int, inst: Instruction) -> None:
        for k, v in enumerate(inst.operands):
            if isinstance(v, Local):
                d = self.defs.get(v.name)
                if d is None:
                    self.error(f"use of undefined value %{v.name}", inst)
                    continue
                if d[0] != v.type:
                    self.error(f"type mismatch for %{v.name}: defined as {d[0]}, used as {v.type}", inst)
                use_block = inst.targets[k] if inst.opcode == "phi" else b.label
                use_idx = None if inst.opcode == "phi" else idx
                if not self.dominates(d, use_block, use_idx):
                    self.error(f"%{v.name} does not dominate its use", inst)
            elif isinstance(v, FuncRef):
                if self.module.get(v.name) is None:
                    self.error(f"reference to unknown function @{v.name}", inst)

    def dominates(self, d, block: str, idx: int | None) -> bool:
        _, dblock, didx = d
        if dblock is None:
            return True
        if block not in self.dom:  # use in unreachable code
            return True
        if dblock == block:
            return idx is None or didx < idx
        return dblock in self.dom[block]

    # -- per instruction ------------------------------------------------------

    def check_instruction(self, b, inst: Instruction) -> None:
        op = inst.opcode
        ops = inst.operands
        t = [v.type for v in ops]

        def want(n: int) -> bool:
            if len(ops) != n:
                self.error(f"{op} expects {n} operands, found {len(ops)}", inst)
                return False
            return True

        if op in BINARY_FP:
            if want(2):
                if not all(x.is_float for x in t):
                    self.error(f"{op} requires floating-point operands", inst)
                elif not (t[0] == t[1] == inst.type):
                    self.error(f"{op} operand types must match", inst)
        elif op in BINARY_INT:
            if want(2):
                if not all(x.is_int for x in t):
                    self.error(f"{op} requires integer operands", inst)
                elif not (t[0] == t[1] == inst.type):
                    self.error(f"{op} operand types must match", inst)
        elif op == "fneg":
            if want(1) and not t[0].is_float:
                self.error("fneg requires a floating-point operand", inst)
        elif op == "fcmp":
            if want(2):
                if not all(x.is_float and not x.is_vector for x in t):
                    self.error("fcmp requires floating-point operands", inst)
                elif t[0] != t[1]:
                    self.error("fcmp operand types must match", inst)
        elif op == "icmp":
            if want(2):
                if not all((x.is_int or x.is_ptr) and not x.is_vector for x in t):
                    self.error("icmp requires integer or pointer operands", inst)
                elif t[0] != t[1]:
                    self.error("icmp operand types must match", inst)
        elif op in CASTS:
            if want(1):
                self.check_cast(inst, t[0], inst.type)
        elif op == "select":
            if want(3):
                if t[0] != I1:
                    self.error("select condition must be i1", inst)
                if t[1] != t[2] or t[1] != inst.type:
                    self.error("select operand types must match", inst)
        elif op == "extractelement":
            if want(2):
                if not t[0].is_vector or not t[1].is_int:
                    self.error("extractelement takes a vector and an integer index", inst)
                elif inst.type != t[0].element:
                    self.error("extractelement result type mismatch", inst)
                self.check_lane_index(inst, ops[1], t[0])
        elif op == "insertelement":
            if want(3):
                if not t[0].is_vector or t[1] != t[0].element or not t[2].is_int:
                    self.error("insertelement takes a vector, an element and an integer index", inst)
                self.check_lane_index(inst, ops[2], t[0])
        elif op == "shufflevector":
            if want(3):
                mask = ops[2]
                if not t[0].is_vector or t[0] != t[1]:
                    self.error("shufflevector operands must be vectors of one type", inst)
                elif not isinstance(mask, Const) or mask.type.scalar != "i32":
                    self.error("shufflevector mask must be a constant i32 vector", inst)
                else:
                    n = 2 * t[0].lanes
                    payload = mask.payload if isinstance(mask.payload, tuple) else (mask.payload,)
                    if any(not 0 <= x < n for x in payload):
                        self.error("shufflevector mask index out of range", inst)
        elif op == "load":
            if want(1) and not t[0].is_ptr:
                self.error("load address must be ptr", inst)
        elif op == "store":
            if want(2) and not t[1].is_ptr:
                self.error("store address must be ptr", inst)
        elif op == "alloca":
            if len(ops) > 1 or (ops and not t[0].is_int):
                self.error("alloca count must be an integer", inst)
            if inst.alloc_type is None or inst.alloc_type.is_void:
                self.error("alloca needs an element type", inst)
        elif op == "ptradd":
            if want(2) and (not t[0].is_ptr or t[1] != I64):
                self.error("ptradd takes (ptr, i64)", inst)
        elif op in ("memcpy", "memset"):
            second = "ptr" if op == "memcpy" else "i8"
            if want(3) and (not t[0].is_ptr or t[1].scalar != second or t[1].is_vector or t[2] != I64):
                self.error(f"{op} takes (ptr, {second}, i64)", inst)
        elif op == "call":
            self.check_call(inst)
        elif op == "phi":
            self.check_phi(b, inst)
        elif op == "br":
            self.check_targets(inst, 1)
        elif op == "condbr":
            self.check_targets(inst, 2)
            if want(1) and t[0] != I1:
                self.error("condbr condition must be i1", inst)
        elif op == "ret":
            if self.fn.ret.is_void:
                if ops:
                    self.error("return type mismatch", inst)
            elif len(ops) != 1 or t[0] != self.fn.ret:
                self.error("return type mismatch", inst)
        elif op == "unreachable":
            pass
        else:
            self.error(f"unknown opcode {op}", inst)

    def check_lane_index(self, inst, idx, vt: IrType) -> None:
        if isinstance(idx, Const) and vt.is_vector and not 0 <= idx.payload < vt.lanes:
            self.error("vector lane index out of range", inst)

    def check_cast(self, inst: Instruction, src: IrType, dst: IrType) -> None:
        op = inst.opcode
        if dst is None or src.lanes != dst.lanes:
            self.error(f"{op} must preserve the lane count", inst)
            return
        ok = True
        if op == "fpext":
            ok = src.is_float and dst.is_float and src.size < dst.size
        elif op == "fptrunc":
            ok = src.is_float and dst.is_float and src.size > dst.size
        elif op == "sitofp":
            ok = src.is_int and dst.is_float
        elif op == "fptosi":
            ok = src.is_float and dst.is_int
        elif op == "bitcast":
            ok = src.size == dst.size and not src.is_ptr and not dst.is_ptr and src.scalar != "i1"
        if not ok:
            self.error(f"invalid {op} from {src} to {dst}", inst)

    def check_call(self, inst: Instruction) -> None:
        if not inst.operands:
            self.error("call without callee", inst)
            return
        callee = inst.callee
        if not callee.type.is_ptr:
            self.error("callee must be a function pointer", inst)
            return
        if inst.result is not None and inst.type.is_void:
            self.error("void call cannot produce a value", inst)
        if isinstance(callee, FuncRef):
            target = self.module.get(callee.name)
            if target is None:
                return  # reported by the operand scan
            args = [a.type for a in inst.args]
            if args != target.param_types:
                self.error(f"call to @{callee.name} with mismatched argument types", inst)
            if inst.type != target.ret:
                self.error(f"call to @{callee.name} with mismatched return type", inst)

    def check_phi(self, b, inst: Instruction) -> None:
        if len(inst.operands) != len(inst.targets):
            self.error("malformed phi", inst)
            return
        for v in inst.operands:
            if v.type != inst.type:
                self.error("phi incoming value type mismatch", inst)
        preds = sorted(self.preds.get(b.label, []))
        if sorted(inst.targets) != preds:
            self.error("phi incoming blocks do not match predecessors", inst)

    def check_targets(self, inst: Instruction, n: int) -> None:
        if len(inst.targets) != n:
            self.error(f"{inst.opcode} expects {n} targets", inst)
        for t in inst.targets:
            if t not in self.labels:
                self.error(f"branch to unknown block %{t}", inst)


def _dominators(fn: Function, preds: dict[str, list[str]]) -> dict[str, set[str]]:
    """Dominator sets of the blocks reachable from the entry."""
    entry = fn.blocks[0].label
    succ = {b.label: [s for s in b.successors() if s in preds] for b in fn.blocks}
    reach, stack = {entry}, [entry]
    while stack:
        for s in succ[stack.pop()]:
            if s not in reach:
                reach.add(s)
                stack.append(s)
    order = [b.label for b in fn.blocks if b.label in reach]
    dom = {lbl: set(reach) for lbl in order}
    dom[entry] = {entry}
    changed = True
    while changed:
        changed = False
        for lbl in order[1:]:
            ps = [p for p in preds[lbl] if p in reach]
            new = set.intersection(*(dom[p] for p in ps)) if ps else set()
            new = new | {lbl}
            if new != dom[lbl]:
                dom[lbl] = new
                changed = True
    return dom
