"""The small SSA IR that programs under test are written in."""

from .core import (
    F32, F64, F128, I1, I8, I32, I64, PTR, VOID, Block, Const, FuncRef, Function,
    Instruction, IrType, Local, Module, SourceLoc,
)
from .parser import ParseError, parse_module
from .printer import print_module
from .verifier import Diagnostic, VerifyError, verify_module

__all__ = [
    "F32", "F64", "F128", "I1", "I8", "I32", "I64", "PTR", "VOID",
    "Block", "Const", "FuncRef", "Function", "Instruction", "IrType", "Local",
    "Module", "SourceLoc", "ParseError", "parse_module", "print_module",
    "Diagnostic", "VerifyError", "verify_module",
]
