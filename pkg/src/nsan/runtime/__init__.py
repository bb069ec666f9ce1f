"""Sanitizer runtime: shadow memory, checks, call protocols and reporting."""

from .core import Halt, Runtime, eval_fcmp, extend
from .flags import RuntimeFlags, apply_options, parse_options
from .memory import BASE, CODE_BASE, Arena, ShadowMemory, Trap
from .report import (
    CheckKind, Frame, ResumeEvent, WarningEvent, capture_stack, format_warning,
)
from .suppressions import (
    Suppression, SuppressionError, load_suppressions, match_suppression,
    parse_suppressions,
)

__all__ = [
    "Halt", "Runtime", "eval_fcmp", "extend",
    "RuntimeFlags", "apply_options", "parse_options",
    "BASE", "CODE_BASE", "Arena", "ShadowMemory", "Trap",
    "CheckKind", "Frame", "ResumeEvent", "WarningEvent", "capture_stack", "format_warning",
    "Suppression", "SuppressionError", "load_suppressions", "match_suppression",
    "parse_suppressions",
]
