"""The sanitizer runtime proper: checks, call protocols and hook dispatch.

Instrumented code talks to the runtime only through ``__nsan_*`` functions.
:meth:`Runtime.hook` maps each such name to a Python callable; the
interpreter binds those callables once per run.
"""

from __future__ import annotations

import re
import struct
import sys
from collections import Counter
from typing import Callable

from .. import fp
from ..extended import (
    CATEGORICAL_MISMATCH, ABS_ONLY, ZERO, Quad, relative_error, truncate_shadow,
)
from ..ir.core import FCMP_PREDS
from .flags import RuntimeFlags
from .memory import BASE, TYPE_SEQ, Arena, ShadowMemory
from .report import CheckKind, ResumeEvent, WarningEvent, capture_stack, format_warning
from .suppressions import Suppression, match_suppression

_D = struct.Struct("<d")


class Halt(Exception):
    """Raised after the first warning when ``halt_on_error`` is set."""

    def __init__(self, event: WarningEvent):
        super().__init__(format_warning(event))
        self.event = event


def extend(v: float, vtype: str):
    """The shadow of ``v`` when nothing better is known."""
    return v if vtype == "f32" else Quad.from_float(v)


def shadow_zero(mangled: str):
    """Zero of a shadow type given its mangled name (``f64``, ``v2f128``...)."""
    m = re.fullmatch(r"(?:v(\d+))?(f64|f128)", mangled)
    if not m:
        raise ValueError(f"not a shadow type: {mangled}")
    z = 0.0 if m.group(2) == "f64" else ZERO
    return tuple([z] * int(m.group(1))) if m.group(1) else z


SHADOW_OF = {"f32": "f64", "f64": "f128"}

USER_API = (
    "__nsan_check_float", "__nsan_check_double",
    "__nsan_resume_float", "__nsan_resume_double",
    "__nsan_dump_shadow_mem",
)


class Runtime:
    def __init__(
        self,
        arena: Arena | None = None,
        flags: RuntimeFlags | None = None,
        suppressions: list[Suppression] | tuple = (),
        frames: list | None = None,
        err: Callable[[str], None] | None = None,
    ):
        self.arena = arena if arena is not None else Arena()
        self.shadow = ShadowMemory(self.arena)
        self.flags = flags or RuntimeFlags()
        self.suppressions = list(suppressions)
        self.frames = frames if frames is not None else []
        self.err = err if err is not None else sys.stderr.write
        self.fn_ids: dict[str, int] = {}
        # shadow stack and return slot
        self.arg_tag: int | None = None
        self.arg_slots: list = []
        self.ret_tag: int | None = None
        self.ret_value = None
        self._ret_ok = False
        # results
        self.warnings: list[WarningEvent] = []
        self.suppressed: list[WarningEvent] = []
        self.resumed: list[ResumeEvent] = []
        self.stats: Counter = Counter()
        self._sites: dict[tuple, WarningEvent] = {}
        self._suppressed_sites: dict[tuple, WarningEvent] = {}

    # -- consistency ------------------------------------------------------------

    def consistent(self, v: float, s, vtype: str) -> tuple[bool, float, object]:
        """``(ok, truncated_shadow, relative_error)`` under the current flags."""
        t = truncate_shadow(s, vtype)
        if t == v:
            return True, t, 0.0
        err = relative_error(v, s, vtype)
        if err is CATEGORICAL_MISMATCH:
            return False, t, err
        if err == 0.0:
            return True, t, err
        abs_ok = abs(v - t) <= self.flags.abs_epsilon(vtype)
        rel_ok = err is not ABS_ONLY and err <= self.flags.rel_epsilon(vtype)
        strategy = self.flags.comparison_strategy
        if strategy == "epsilon":
            ok = abs_ok
        elif strategy == "relative-epsilon":
            ok = rel_ok or (err is ABS_ONLY and abs_ok)
        else:
            ok = abs_ok or rel_ok
        return ok, t, err

    def check_value(self, kind: CheckKind, vtype: str, v: float, s, address: int | None = None):
        """Check ``v`` against its shadow; returns the shadow to continue with."""
        self.stats["checks"] += 1
        ok, t, err = self.consistent(v, s, vtype)
        if ok:
            return s
        event = WarningEvent(kind, vtype, v, s, t, err, address, capture_stack(self.frames))
        if self._report(event) == "resume-value":
            self.note_resumed("suppression")
            return extend(v, vtype)
        return s

    def check_fcmp(self, pred: str, vtype: str, a: float, b: float, sa, sb) -> WarningEvent | None:
        self.stats["fcmp_checks"] += 1
        ra, rs = eval_fcmp(pred, a, b), eval_fcmp(pred, sa, sb)
        if ra == rs:
            return None
        event = WarningEvent(
            CheckKind.FCMP, vtype, stack=capture_stack(self.frames),
            pred=pred, operands=(a, b, sa, sb), results=(ra, rs),
        )
        self._report(event)
        return event

    def _report(self, event: WarningEvent) -> str | None:
        """Suppress or emit ``event``; returns the suppression action if any."""
        sup = match_suppression(event.stack, self.suppressions)
        if sup is not None:
            event.suppressed = True
            self._record(event, self.suppressed, self._suppressed_sites)
            return sup.action
        if self._record(event, self.warnings, self._sites):
            limit = self.flags.max_warnings
            if limit is None or len(self.warnings) <= limit:
                self.err(format_warning(event))
        if self.flags.halt_on_error:
            raise Halt(event)
        return None

    def _record(self, event: WarningEvent, log: list, sites: dict) -> bool:
        """Append ``event`` unless its site was already seen; True if new."""
        if self.flags.dedup:
            prev = sites.get(event.site)
            if prev is not None:
                prev.count += 1
                return False
            sites[event.site] = event
        log.append(event)
        return True

    def note_resumed(self, reason: str = "call") -> None:
        fr = self.frames[-1] if self.frames else None
        self.resumed.append(ResumeEvent(reason, fr[0] if fr else None, fr[1] if fr else None))

    # -- shadow stack and return slot -----------------------------------------

    def set_arg_tag(self, callee: int) -> None:
        self.arg_tag = callee
        self.arg_slots = []

    def push_arg(self, s) -> None:
        self.arg_slots.append(s)

    def arg_tag_matches(self, fn: int) -> bool:
        ok = self.arg_tag == fn
        self.stats["args_shadow" if ok else "args_extended"] += 1
        return ok

    def get_arg(self, idx: int, default):
        if 0 <= idx < len(self.arg_slots):
            return self.arg_slots[idx]
        return default

    def clear_args(self) -> None:
        self.arg_tag = None
        self.arg_slots = []

    def load_args(self, fn: int, app_args: list, vtypes: list[str]) -> list:
        """Callee side in one step: stored shadows on a tag match, else extensions."""
        if self.arg_tag_matches(fn) and len(self.arg_slots) == len(app_args):
            out = list(self.arg_slots)
        else:
            out = [extend(v, t) for v, t in zip(app_args, vtypes)]
        self.clear_args()
        return out

    def set_return(self, fn: int, s) -> None:
        self.ret_tag = fn
        self.ret_value = s

    def ret_tag_matches(self, callee: int) -> bool:
        ok = self.ret_tag == callee
        self.ret_tag = None  # read clears the tag
        self._ret_ok = ok
        self.stats["rets_shadow" if ok else "rets_extended"] += 1
        return ok

    def take_return(self, callee: int, app_value: float, vtype: str):
        if self.ret_tag_matches(callee):
            return self.ret_value
        return extend(app_value, vtype)

    # -- hooks -------------------------------------------------------------------

    def hook(self, name: str) -> Callable | None:
        """The callable implementing runtime function ``name`` (None if unknown)."""
        if name in _FIXED_HOOKS:
            return getattr(self, _FIXED_HOOKS[name])
        for pattern, factory in _PATTERN_HOOKS:
            m = pattern.fullmatch(name)
            if m:
                return getattr(self, factory)(m.group(1))
        return None

    def _h_check(self, vtype: str) -> Callable:
        check = self.check_value
        if vtype == "f32":
            rnd = fp.round_f32

            stats = self.stats

            def hook(v, s, kind, addr):
                if rnd(s) == v:
                    stats["checks"] += 1
                    return s
                return check(CheckKind(kind), "f32", v, s, addr or None)
        else:
            def hook(v, s, kind, addr):
                return check(CheckKind(kind), "f64", v, s, addr or None)
        return hook

    def _h_fcmp_fail(self, vtype: str) -> Callable:
        def hook(a, b, sa, sb, pred):
            self.check_fcmp(FCMP_PREDS[pred], vtype, a, b, sa, sb)
        return hook

    def _h_get_arg(self, mangled: str) -> Callable:
        zero = shadow_zero(mangled)
        return lambda idx: self.get_arg(idx, zero)

    def _h_push_arg(self, mangled: str) -> Callable:
        return self.push_arg

    def _h_set_ret(self, mangled: str) -> Callable:
        return self.set_return

    def _h_ret_value(self, mangled: str) -> Callable:
        zero = shadow_zero(mangled)
        return lambda: self.ret_value if self._ret_ok else zero

    def _h_load_valid(self, vtype: str) -> Callable:
        seq = TYPE_SEQ[vtype]
        n = len(seq)
        types = self.shadow.types
        check = self.arena.check
        note = self.note_resumed

        def hook(p):
            # typed bytes are always live, so a full match needs no bounds check
            if p >= BASE and types[p:p + n] == seq:
                return True
            check(p, n)
            if any(types[p:p + n]):
                note("load")
            return False
        return hook

    def _h_load(self, vtype: str) -> Callable:
        values = self.shadow.values
        if vtype == "f32":
            unpack = _D.unpack_from
            return lambda p: unpack(values, 2 * p)[0]
        from_bytes = Quad.from_bytes
        return lambda p: from_bytes(values[2 * p:2 * p + 16])

    def load_or_extend(self, vtype: str) -> Callable:
        """``valid(p) ? shadow_load(p) : extend(v)`` as a single call."""
        seq = TYPE_SEQ[vtype]
        n = len(seq)
        types, values = self.shadow.types, self.shadow.values
        check = self.arena.check
        note = self.note_resumed
        if vtype == "f32":
            unpack = _D.unpack_from

            def hook(p, v):
                if p >= BASE and types[p:p + 4] == seq:
                    return unpack(values, 2 * p)[0]
                check(p, 4)
                if any(types[p:p + 4]):
                    note("load")
                return v
        else:
            from_bytes, from_float = Quad.from_bytes, Quad.from_float

            def hook(p, v):
                if p >= BASE and types[p:p + n] == seq:
                    return from_bytes(values[2 * p:2 * p + 16])
                check(p, n)
                if any(types[p:p + n]):
                    note("load")
                return from_float(v)
        return hook

    def _h_load_checked(self, vtype: str) -> Callable:
        valid = self._h_load_valid(vtype)
        raw = self._h_load(vtype)

        def hook(p, v):
            if not valid(p):
                return extend(v, vtype)
            s = raw(p)
            ok, t, err = self.consistent(v, s, vtype)
            if ok:
                return s
            if self.flags.warn_on_load_mismatch:
                event = WarningEvent(CheckKind.LOAD, vtype, v, s, t, err, p, capture_stack(self.frames))
                self._report(event)
            self.note_resumed("load-mismatch")
            return extend(v, vtype)
        return hook

    def _h_store(self, vtype: str) -> Callable:
        seq = TYPE_SEQ[vtype]
        n = len(seq)
        types, values = self.shadow.types, self.shadow.values
        check = self.arena.check
        if vtype == "f32":
            pack = _D.pack_into

            def hook(p, s):
                check(p, 4)
                types[p:p + 4] = seq
                pack(values, 2 * p, s)
        else:
            def hook(p, s):
                check(p, n)
                types[p:p + n] = seq
                values[2 * p:2 * p + 16] = s.to_bytes()
        return hook

    def _h_note_resumed(self) -> None:
        self.note_resumed("call")

    def _h_set_unknown(self, p: int, n: int) -> None:
        self.shadow.set_unknown(p, n)

    def _h_copy_shadow(self, dst: int, src: int, n: int) -> None:
        self.shadow.copy(dst, src, n)

    # user-facing API, callable from IR

    def _explicit(self, name: str, vtype: str, v: float) -> None:
        if self.arg_tag == self.fn_ids.get(name) and self.arg_slots:
            s = self.arg_slots[0]
        else:
            s = extend(v, vtype)
        self.clear_args()
        self.check_value(CheckKind.EXPLICIT, vtype, v, s)

    def api_check_float(self, v: float) -> None:
        self._explicit("__nsan_check_float", "f32", v)

    def api_check_double(self, v: float) -> None:
        self._explicit("__nsan_check_double", "f64", v)

    def api_resume(self, v: float) -> None:
        # the rebinding itself is done by the instrumentation
        self.clear_args()

    def api_dump_shadow_mem(self, p: int, n: int) -> None:
        # diagnostic output, so it joins the warnings rather than program stdout
        self.err(self.shadow.dump(p, n))

    # -- summary -------------------------------------------------------------------

    def counts_by_kind(self) -> Counter:
        return Counter(w.kind.label for w in self.warnings)


def eval_fcmp(pred: str, a, b) -> bool:
    if pred == "oeq":
        return a == b
    if pred == "one":
        return a < b or a > b
    if pred == "olt":
        return a < b
    if pred == "ole":
        return a <= b
    if pred == "ogt":
        return a > b
    if pred == "oge":
        return a >= b
    ordered = a == a and b == b
    return ordered if pred == "ord" else not ordered


_FIXED_HOOKS = {
    "__nsan_arg_tag_matches": "arg_tag_matches",
    "__nsan_clear_args": "clear_args",
    "__nsan_set_arg_tag": "set_arg_tag",
    "__nsan_ret_tag_matches": "ret_tag_matches",
    "__nsan_note_resumed": "_h_note_resumed",
    "__nsan_set_unknown": "_h_set_unknown",
    "__nsan_copy_shadow": "_h_copy_shadow",
    "__nsan_check_float": "api_check_float",
    "__nsan_check_double": "api_check_double",
    "__nsan_resume_float": "api_resume",
    "__nsan_resume_double": "api_resume",
    "__nsan_dump_shadow_mem": "api_dump_shadow_mem",
}

_T = r"(f32|f64)"
_S = r"((?:v\d+)?(?:f64|f128))"
_PATTERN_HOOKS = [
    (re.compile(rf"__nsan_check_{_T}"), "_h_check"),
    (re.compile(rf"__nsan_fcmp_fail_{_T}"), "_h_fcmp_fail"),
    (re.compile(rf"__nsan_get_arg_{_S}"), "_h_get_arg"),
    (re.compile(rf"__nsan_push_arg_{_S}"), "_h_push_arg"),
    (re.compile(rf"__nsan_set_ret_{_S}"), "_h_set_ret"),
    (re.compile(rf"__nsan_ret_value_{_S}"), "_h_ret_value"),
    (re.compile(rf"__nsan_shadow_load_valid_{_T}"), "_h_load_valid"),
    (re.compile(rf"__nsan_shadow_load_checked_{_T}"), "_h_load_checked"),
    (re.compile(rf"__nsan_shadow_load_{_T}"), "_h_load"),
    (re.compile(rf"__nsan_shadow_store_{_T}"), "_h_store"),
]
