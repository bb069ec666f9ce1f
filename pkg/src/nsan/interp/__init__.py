"""Interpreter for (possibly instrumented) IR modules."""

from .builtins import BUILTINS, Builtin, Lcg, format_f32
from .codegen import CompiledModule, ModuleCodegen
from .engine import ExecState, RunResult, TrapInfo, call_builtin, convert_arg, function_ids, run

__all__ = [
    "BUILTINS", "Builtin", "Lcg", "format_f32",
    "CompiledModule", "ModuleCodegen",
    "ExecState", "RunResult", "TrapInfo", "call_builtin", "convert_arg", "function_ids", "run",
]
