"""Running a module: state, external binding and the ``run`` entry point."""

from __future__ import annotations

import sys
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from .. import fp
from ..extended import Quad
from ..ir.core import Const, Function, IrType, Module
from ..ir.verifier import check_module
from ..runtime.core import Halt, Runtime
from ..runtime.flags import RuntimeFlags
from ..runtime.memory import CODE_BASE, CODE_STRIDE, Arena, Trap
from ..runtime.report import Frame, ResumeEvent, WarningEvent, capture_stack
from .builtins import BUILTINS, Lcg
from .codegen import CompiledModule, ModuleCodegen

RECURSION_LIMIT = 8000


@dataclass
class TrapInfo:
    message: str
    stack: list[Frame]

    def format(self) -> str:
        lines = [f"TRAP: {self.message}"]
        lines.extend(str(fr) for fr in self.stack)
        return "\n".join(lines) + "\n"


@dataclass
class RunResult:
    value: object
    ret_type: IrType
    warnings: list[WarningEvent] = field(default_factory=list)
    suppressed: list[WarningEvent] = field(default_factory=list)
    resumed: list[ResumeEvent] = field(default_factory=list)
    stats: Counter = field(default_factory=Counter)
    stdout: str = ""
    trap: TrapInfo | None = None
    halted: bool = False

    @property
    def ok(self) -> bool:
        return self.trap is None and not self.halted

    def counts_by_kind(self) -> Counter:
        return Counter(w.kind.label for w in self.warnings)


class ExecState:
    """Everything one execution owns: memory, frames, runtime, output."""

    def __init__(self, module: Module, flags: RuntimeFlags, suppressions=(),
                 stderr: Callable[[str], None] | None = None, echo_stdout: bool = False):
        self.module = module
        self.flags = flags
        self.arena = Arena()
        self.frames: list = []
        self._stdout: list[str] = []
        self.echo_stdout = echo_stdout
        self.rng = Lcg(flags.seed)
        self.runtime = Runtime(self.arena, flags, suppressions, self.frames,
                               err=stderr if stderr is not None else (lambda s: None))
        self.fn_ids = function_ids(module)
        self.runtime.fn_ids = dict(self.fn_ids)
        self.compiled: CompiledModule = ModuleCodegen(
            module, self.fn_ids, self.arena, self.resolve_external,
            self.frames.append, self.frames.pop, self.runtime,
        ).compile()

    def write_stdout(self, text: str) -> None:
        self._stdout.append(text)
        if self.echo_stdout:
            sys.stdout.write(text)

    @property
    def stdout(self) -> str:
        return "".join(self._stdout)

    def resolve_external(self, fn: Function) -> Callable:
        if fn.name.startswith("__nsan_"):
            hook = self.runtime.hook(fn.name)
            if hook is not None:
                return hook
        b = BUILTINS.get(fn.name)
        if b is not None:
            return b.bind(self)
        name = fn.name

        def missing(*args):
            raise Trap(f"unknown external function @{name}")
        return missing

    def call(self, name: str, *args):
        return self.compiled.functions[name](*args)


def function_ids(module: Module) -> dict[str, int]:
    """The address each function's ``@name`` evaluates to."""
    return {f.name: CODE_BASE + CODE_STRIDE * i for i, f in enumerate(module.functions)}


def call_builtin(name: str, args: Sequence, state: ExecState):
    """Invoke builtin ``name`` with application arguments in ``state``."""
    b = BUILTINS.get(name)
    if b is None:
        raise Trap(f"unknown external function @{name}")
    return b.bind(state)(*args)


def convert_arg(t: IrType, value):
    """Coerce a Python value (or typed literal text) to an IR runtime value."""
    if isinstance(value, str):
        text = value.split(":", 1)[1] if ":" in value and value.split(":", 1)[0] == str(t) else value
        if t.is_float:
            if t.scalar == "f128":
                return Quad.from_hex(text) if "0x" in text.lower() else Quad.from_fraction(Fraction(text))
            if "0x" in text.lower():
                neg, n, e = fp.parse_hex(text)
                return fp.dyadic_to_float(neg, n, e, fp.FORMATS[t.scalar])
            value = float(text)
        else:
            value = int(text, 0)
    return Const.of(t, value).value


def run(module: Module, entry: str = "main", args: Sequence = (), flags: RuntimeFlags | None = None,
        suppressions=(), stderr: Callable[[str], None] | None = None, echo_stdout: bool = False,
        verify: bool = True) -> RunResult:
    """Execute ``entry`` in ``module`` and collect what the sanitizer saw.

    Warnings are formatted to ``stderr`` (a ``write``-like callable) as they
    happen and also returned.  Traps and halts end the run early; they are
    reported in the result rather than raised.
    """
    if verify:
        check_module(module)
    fn = module.get(entry)
    if fn is None or fn.is_declaration:
        raise KeyError(f"no function @{entry} to run")
    if len(args) != len(fn.params):
        raise ValueError(f"@{entry} takes {len(fn.params)} argument(s), got {len(args)}")
    flags = flags or RuntimeFlags()
    state = ExecState(module, flags, suppressions, stderr, echo_stdout)
    values = [convert_arg(t, a) for (_, t), a in zip(fn.params, args)]

    value, trap, halted = None, None, False
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, RECURSION_LIMIT))
    try:
        value = state.call(entry, *values)
    except Trap as exc:
        trap = TrapInfo(str(exc), capture_stack(state.frames))
    except RecursionError:
        trap = TrapInfo("stack overflow", capture_stack(state.frames[-16:]))
    except Halt:
        halted = True
    finally:
        sys.setrecursionlimit(old_limit)

    rt = state.runtime
    return RunResult(
        value=value, ret_type=fn.ret, warnings=rt.warnings, suppressed=rt.suppressed,
        resumed=rt.resumed, stats=rt.stats, stdout=state.stdout, trap=trap, halted=halted,
    )
