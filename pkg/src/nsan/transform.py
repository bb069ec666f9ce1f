"""The instrumentation pass.

Every ``f32``/``f64`` value (scalar or vector) in an instrumented function gets
a shadow twin one precision up.  Arithmetic is duplicated in place; anything
that crosses a function or memory boundary goes through ``__nsan_*`` runtime
functions, which the pass declares on demand.

Shadow twins are named ``%s_<name>``.  The rewritten module carries the flag
``nsan.instrumented`` and is rejected if fed back in.
"""

from __future__ import annotations

import copy
import dataclasses
import sys
from dataclasses import dataclass

from .extended import MATH_REGISTRY
from .ir.core import (
    BINARY_FP, FCMP_PREDS, I1, I32, I64, PTR, VOID, Block, Const,
    FuncRef, Function, Instruction, IrType, Local, Module, SourceLoc,
)
from .ir.verifier import VerifyError, verify_module
from .runtime.report import CheckKind

MODULE_FLAG = "nsan.instrumented"
SHADOWED = {"f32": "f64", "f64": "f128"}


class InstrumentError(Exception):
    pass


@dataclass
class InstrumentConfig:
    check_stores: bool = True
    check_ret: bool = True
    check_args: bool = True
    check_fcmp: bool = True
    check_loads: bool = False
    instrument_all: bool = True
    # consulted only when instrument_all is False
    only: frozenset = frozenset()

    @property
    def any_checks(self) -> bool:
        return self.check_stores or self.check_ret or self.check_args or self.check_fcmp or self.check_loads


def is_shadowed(t: IrType | None) -> bool:
    return t is not None and t.scalar in SHADOWED


def shadow_type_of(t: IrType) -> IrType:
    """``f32 -> f64`` and ``f64 -> f128``, lane count preserved."""
    if not is_shadowed(t):
        raise TypeError(f"{t} has no shadow type")
    return IrType(SHADOWED[t.scalar], t.lanes)


def instrument_module(m: Module, cfg: InstrumentConfig | None = None) -> Module:
    cfg = cfg or InstrumentConfig()
    if MODULE_FLAG in m.flags:
        raise InstrumentError("module is already instrumented")
    diags = verify_module(m)
    if diags:
        raise VerifyError(diags)
    if not cfg.any_checks:
        print("nsan: warning: all checks disabled; shadows are propagated but never checked",
              file=sys.stderr)
    out = Module([], m.source_filename, m.flags | {MODULE_FLAG})
    decls: dict[str, Function] = {}
    for fn in m.functions:
        selected = cfg.instrument_all or fn.name in cfg.only
        if fn.instrumented and selected:
            out.functions.append(_FunctionPass(m, fn, cfg, decls).run())
        else:
            out.functions.append(copy.deepcopy(fn))
    for name, decl in decls.items():
        if m.get(name) is None:
            out.functions.append(decl)
    diags = verify_module(out)
    if diags:
        raise InstrumentError("instrumented module does not verify:\n" + "\n".join(map(str, diags)))
    return out


def _zero_vector(t: IrType) -> Const:
    return Const.of(t, [0.0] * t.lanes)


class _FunctionPass:
    def __init__(self, module: Module, fn: Function, cfg: InstrumentConfig, decls: dict):
        self.module = module
        self.fn = fn
        self.cfg = cfg
        self.decls = decls
        self.self_ref = FuncRef(fn.name)
        self.used = {n for n, _ in fn.params}
        self.used |= {i.result for i in fn.instructions() if i.result is not None}
        self.labels = {b.label for b in fn.blocks}
        self.shadow: dict[str, Local] = {}
        self.rebind: dict[str, object] = {}
        self.blocks: list[Block] = []
        self.cur: Block | None = None
        self.exit_label: dict[str, str] = {}
        self.loc: SourceLoc | None = None

    # -- naming and emission ---------------------------------------------------

    def fresh(self, base: str) -> str:
        name, k = base, 1
        while name in self.used:
            name = f"{base}.{k}"
            k += 1
        self.used.add(name)
        return name

    def fresh_label(self, base: str) -> str:
        label, k = base, 1
        while label in self.labels:
            label = f"{base}.{k}"
            k += 1
        self.labels.add(label)
        return label

    def start_block(self, label: str) -> None:
        self.cur = Block(label)
        self.blocks.append(self.cur)

    def emit(self, inst: Instruction) -> Local | None:
        self.cur.instructions.append(inst)
        return inst.value

    def op(self, opcode: str, operands: list, type: IrType, name: str | None = None,
           hint: str = "t", **kw) -> Local | None:
        result = None if type.is_void else (name or self.fresh(hint))
        return self.emit(Instruction(opcode, list(operands), result, type, loc=self.loc, **kw))

    def declare(self, name: str, ret: IrType, params: list[IrType]) -> None:
        existing = self.module.get(name) or self.decls.get(name)
        if existing is not None:
            if existing.ret != ret or existing.param_types != params:
                raise InstrumentError(f"@{name} is declared with an incompatible signature")
            return
        self.decls[name] = Function(name, [(f"a{i}", t) for i, t in enumerate(params)], ret,
                                    [], frozenset({"external"}))

    def call(self, name: str, ret: IrType, args: list, result: str | None = None,
             hint: str = "t") -> Local | None:
        self.declare(name, ret, [a.type for a in args])
        return self.op("call", [FuncRef(name)] + list(args), ret, name=result, hint=hint)

    def sh(self, v):
        """Shadow of an application value."""
        if isinstance(v, Local):
            if v.name in self.rebind:
                return self.rebind[v.name]
            return self.shadow[v.name]
        if isinstance(v, Const):
            return Const.of(shadow_type_of(v.type), v.value)
        raise InstrumentError(f"no shadow for {v}")

    def copy(self, inst: Instruction) -> None:
        self.emit(dataclasses.replace(inst, operands=list(inst.operands), targets=list(inst.targets)))

    def twin(self, inst: Instruction, operands: list) -> None:
        """The shadow counterpart: same opcode, shadow types and operands."""
        self.emit(Instruction(inst.opcode, operands, self.shadow[inst.result].name,
                              shadow_type_of(inst.type), pred=inst.pred,
                              targets=list(inst.targets), loc=inst.loc))

    # -- driver ------------------------------------------------------------------

    def run(self) -> Function:
        fn = self.fn
        for name, t in fn.params:
            if is_shadowed(t):
                self.shadow[name] = Local(self.fresh(f"s_{name}"), shadow_type_of(t))
        for inst in fn.instructions():
            if inst.result is not None and is_shadowed(inst.type):
                self.shadow[inst.result] = Local(self.fresh(f"s_{inst.result}"), shadow_type_of(inst.type))
        for i, b in enumerate(fn.blocks):
            self.start_block(b.label)
            self.rebind = {}
            if i == 0:
                self.prologue()
            for inst in b.instructions:
                self.loc = inst.loc
                self.lower(inst)
            self.exit_label[b.label] = self.cur.label
        for b in self.blocks:
            for inst in b.phis():
                inst.targets = [self.exit_label[t] for t in inst.targets]
        out = Function(fn.name, list(fn.params), fn.ret, self.blocks, fn.attrs)
        self.audit(out)
        return out

    def audit(self, out: Function) -> None:
        """Every shadowed value must end up with exactly one defined twin."""
        defined = [i.result for i in out.instructions() if i.result is not None]
        if len(defined) != len(set(defined)):
            raise InstrumentError(f"@{out.name}: duplicate definitions after instrumentation")
        missing = [n for n, s in self.shadow.items() if s.name not in set(defined)]
        if missing:
            raise InstrumentError(f"@{out.name}: no shadow computed for " + ", ".join(f"%{n}" for n in missing))

    def prologue(self) -> None:
        fp_params = [(n, t) for n, t in self.fn.params if is_shadowed(t)]
        if not fp_params:
            return
        self.loc = None
        match = self.call("__nsan_arg_tag_matches", I1, [self.self_ref], hint="nsan.argtag")
        for i, (name, t) in enumerate(fp_params):
            s = shadow_type_of(t)
            got = self.call(f"__nsan_get_arg_{s.mangle()}", s, [Const(I64, i)], hint=f"{name}.arg")
            ext = self.op("fpext", [Local(name, t)], s, hint=f"{name}.ext")
            self.op("select", [match, got, ext], s, name=self.shadow[name].name)
        self.call("__nsan_clear_args", VOID, [])

    # -- per instruction ---------------------------------------------------------

    def lower(self, inst: Instruction) -> None:
        op = inst.opcode
        fp_result = inst.result is not None and is_shadowed(inst.type)
        if op == "phi":
            self.copy(inst)
            if fp_result:
                self.twin(inst, [self.sh_phi(v) for v in inst.operands])
        elif op in BINARY_FP or op == "fneg":
            self.copy(inst)
            if fp_result:
                self.twin(inst, [self.sh(v) for v in inst.operands])
        elif op in ("fpext", "fptrunc", "sitofp", "fptosi", "bitcast"):
            self.lower_cast(inst)
        elif op == "select":
            self.copy(inst)
            if fp_result:
                c, a, b = inst.operands
                self.twin(inst, [c, self.sh(a), self.sh(b)])
        elif op == "extractelement":
            self.copy(inst)
            if fp_result:
                self.twin(inst, [self.sh(inst.operands[0]), inst.operands[1]])
        elif op == "insertelement":
            self.copy(inst)
            if fp_result:
                v, e, idx = inst.operands
                self.twin(inst, [self.sh(v), self.sh(e), idx])
        elif op == "shufflevector":
            self.copy(inst)
            if fp_result:
                a, b, mask = inst.operands
                self.twin(inst, [self.sh(a), self.sh(b), mask])
        elif op == "fcmp":
            self.lower_fcmp(inst)
        elif op == "load":
            self.copy(inst)
            if fp_result:
                self.lower_load(inst)
        elif op == "store":
            self.lower_store(inst)
        elif op == "memcpy":
            self.copy(inst)
            dst, src, n = inst.operands
            self.call("__nsan_copy_shadow", VOID, [dst, src, n])
        elif op == "memset":
            self.copy(inst)
            dst, _, n = inst.operands
            self.call("__nsan_set_unknown", VOID, [dst, n])
        elif op == "call":
            self.lower_call(inst)
        elif op == "ret":
            self.lower_ret(inst)
        else:
            self.copy(inst)

    def sh_phi(self, v):
        if isinstance(v, Local):
            return self.shadow[v.name]
        return self.sh(v)

    def lower_cast(self, inst: Instruction) -> None:
        self.copy(inst)
        if inst.result is None or not is_shadowed(inst.type):
            return
        op, src = inst.opcode, inst.operands[0]
        s_type = shadow_type_of(inst.type)
        name = self.shadow[inst.result].name
        if op in ("fpext", "fptrunc") and is_shadowed(src.type):
            self.twin(inst, [self.sh(src)])
        elif op == "sitofp":
            self.twin(inst, [src])
        elif op == "bitcast" and src.type == inst.type:
            s = self.sh(src)
            self.op("select", [Const(I1, 1), s, s], s_type, name=name)
        else:
            # bits from elsewhere (int->float bitcast, f128 truncation): start over
            self.op("fpext", [inst.value], s_type, name=name)
            if op == "bitcast":
                self.call("__nsan_note_resumed", VOID, [])

    def lower_fcmp(self, inst: Instruction) -> None:
        self.copy(inst)
        a, b = inst.operands
        if not (self.cfg.check_fcmp and is_shadowed(a.type)):
            return
        s_r = self.op("fcmp", [self.sh(a), self.sh(b)], I1, pred=inst.pred, hint=f"{inst.result}.s")
        same = self.op("icmp", [inst.value, s_r], I1, pred="eq", hint=f"{inst.result}.same")
        here = self.cur.label
        fail = self.fresh_label(f"{here}.fc.fail")
        cont = self.fresh_label(f"{here}.fc.cont")
        self.op("condbr", [same], VOID, targets=[cont, fail])
        self.start_block(fail)
        pred = Const(I32, FCMP_PREDS.index(inst.pred))
        self.call(f"__nsan_fcmp_fail_{a.type.scalar}", VOID, [a, b, self.sh(a), self.sh(b), pred])
        self.op("br", [], VOID, targets=[cont])
        self.start_block(cont)

    # loads and stores

    def load_shadow(self, p, x: Local, name: str | None) -> Local:
        t = x.type
        s = shadow_type_of(t)
        if self.cfg.check_loads:
            return self.call(f"__nsan_shadow_load_checked_{t.scalar}", s, [p, x], result=name)
        ok = self.call(f"__nsan_shadow_load_valid_{t.scalar}", I1, [p], hint=f"{x.name}.valid")
        got = self.call(f"__nsan_shadow_load_{t.scalar}", s, [p], hint=f"{x.name}.sld")
        ext = self.op("fpext", [x], s, hint=f"{x.name}.ext")
        return self.op("select", [ok, got, ext], s, name=name, hint=f"s_{x.name}")

    def lane_addr(self, p, i: int, t: IrType):
        if i == 0:
            return p
        return self.op("ptradd", [p, Const(I64, i * t.element.size)], PTR, hint="nsan.lane")

    def lower_load(self, inst: Instruction) -> None:
        p, x = inst.operands[0], inst.value
        name = self.shadow[inst.result].name
        if not x.type.is_vector:
            self.load_shadow(p, x, name)
            return
        t, s = x.type, shadow_type_of(x.type)
        acc = _zero_vector(s)
        for i in range(t.lanes):
            xi = self.op("extractelement", [x, Const(I32, i)], t.element, hint=f"{x.name}.l{i}")
            si = self.load_shadow(self.lane_addr(p, i, t), xi, None)
            last = i == t.lanes - 1
            acc = self.op("insertelement", [acc, si, Const(I32, i)], s,
                          name=name if last else None, hint=f"s_{x.name}.l{i}")

    def check(self, v, s, kind: CheckKind, addr=None):
        """Insert a check of ``v`` against ``s``; returns the shadow to use afterwards."""
        addr = addr if addr is not None else Const(PTR, 0)
        if not v.type.is_vector:
            return self.call(f"__nsan_check_{v.type.scalar}", s.type, [v, s, Const(I32, int(kind)), addr],
                             hint="nsan.chk")
        acc = s
        for i in range(v.type.lanes):
            idx = Const(I32, i)
            vi = self.op("extractelement", [v, idx], v.type.element, hint="nsan.v")
            si = self.op("extractelement", [s, idx], s.type.element, hint="nsan.s")
            ci = self.check(vi, si, kind, self.lane_addr(addr, i, v.type) if kind == CheckKind.STORE else None)
            acc = self.op("insertelement", [acc, ci, idx], s.type, hint="nsan.chkv")
        return acc

    def lower_store(self, inst: Instruction) -> None:
        v, p = inst.operands
        if not is_shadowed(v.type):
            self.copy(inst)
            self.call("__nsan_set_unknown", VOID, [p, Const(I64, v.type.size)])
            return
        s = self.sh(v)
        if self.cfg.check_stores:
            s = self.check(v, s, CheckKind.STORE, p)
        self.copy(inst)
        hook = f"__nsan_shadow_store_{v.type.scalar}"
        if not v.type.is_vector:
            self.call(hook, VOID, [p, s])
            return
        for i in range(v.type.lanes):
            si = self.op("extractelement", [s, Const(I32, i)], s.type.element, hint="nsan.s")
            self.call(hook, VOID, [self.lane_addr(p, i, v.type), si])

    # calls and returns

    def lower_ret(self, inst: Instruction) -> None:
        if inst.operands and is_shadowed(inst.operands[0].type):
            v = inst.operands[0]
            s = self.sh(v)
            if self.cfg.check_ret:
                s = self.check(v, s, CheckKind.RET)
            self.call(f"__nsan_set_ret_{s.type.mangle()}", VOID, [self.self_ref, s])
        self.copy(inst)

    def lower_call(self, inst: Instruction) -> None:
        callee = inst.callee
        name = callee.name if isinstance(callee, FuncRef) else None
        target = self.module.get(name) if name else None
        fp_result = inst.result is not None and is_shadowed(inst.type)
        result_shadow = self.shadow[inst.result].name if fp_result else None

        if name and name.startswith("__nsan_"):
            self.copy(inst)
            if name in ("__nsan_resume_float", "__nsan_resume_double"):
                arg = inst.args[0]
                if isinstance(arg, Local) and is_shadowed(arg.type):
                    self.rebind[arg.name] = self.op("fpext", [arg], shadow_type_of(arg.type),
                                                    hint=f"s_{arg.name}.resumed")
                return
            fp_args = [a for a in inst.args if is_shadowed(a.type)]
            if fp_args:
                # the runtime reads these through the shadow stack
                self.cur.instructions.pop()
                self.push_args(callee, [(a, self.sh(a)) for a in fp_args])
                self.copy(inst)
            if fp_result:
                self.op("fpext", [inst.value], shadow_type_of(inst.type), name=result_shadow)
            return

        entry = MATH_REGISTRY.get(name) if target is not None and target.is_declaration else None
        if entry is not None and self.matches_registry(inst, entry.vtype):
            self.copy(inst)
            if fp_result:
                s = shadow_type_of(inst.type)
                if entry.resumes:
                    self.op("fpext", [inst.value], s, name=result_shadow)
                else:
                    self.call(entry.counterpart, s, [self.sh(a) for a in inst.args], result=result_shadow)
            return

        fp_args = [a for a in inst.args if is_shadowed(a.type)]
        if fp_args:
            pairs = []
            for a in fp_args:
                s = self.sh(a)
                if self.cfg.check_args:
                    s = self.check(a, s, CheckKind.ARG)
                pairs.append((a, s))
            self.push_args(callee, pairs)
        self.copy(inst)
        if not fp_result:
            return
        s = shadow_type_of(inst.type)
        if target is not None and target.is_declaration:
            self.op("fpext", [inst.value], s, name=result_shadow)
            self.call("__nsan_note_resumed", VOID, [])
            return
        match = self.call("__nsan_ret_tag_matches", I1, [callee], hint=f"{inst.result}.rettag")
        got = self.call(f"__nsan_ret_value_{s.mangle()}", s, [], hint=f"{inst.result}.ret")
        ext = self.op("fpext", [inst.value], s, hint=f"{inst.result}.ext")
        self.op("select", [match, got, ext], s, name=result_shadow)

    def push_args(self, callee, pairs: list) -> None:
        self.call("__nsan_set_arg_tag", VOID, [callee])
        for _, s in pairs:
            self.call(f"__nsan_push_arg_{s.type.mangle()}", VOID, [s])

    @staticmethod
    def matches_registry(inst: Instruction, vtype: str) -> bool:
        types = [a.type for a in inst.args] + [inst.type]
        return all(t.scalar == vtype and not t.is_vector for t in types)


def insert_check(value, shadow, kind: CheckKind, loc: SourceLoc | None,
                 addr=None) -> tuple[list[Instruction], object, dict[str, Function]]:
    """The instructions checking ``value`` against ``shadow`` at ``loc``.

    Returns ``(instructions, checked_shadow, declarations)``; vectors get one
    check per lane.  Names are drawn from a private namespace prefixed
    ``nsan.chk``, so callers splicing into an existing function should rename
    on collision.
    """
    host = Function("__nsan_host", [], VOID, [], frozenset())
    p = _FunctionPass(Module([host]), host, InstrumentConfig(), {})
    p.start_block("entry")
    p.loc = loc
    result = p.check(value, shadow, kind, addr)
    return p.cur.instructions, result, p.decls
