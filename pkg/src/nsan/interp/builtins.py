"""External functions the interpreter provides to programs.

Each builtin has an application implementation and a shadow behaviour:

* ``registry-math``: the instrumentation computes the shadow itself from a
  counterpart call (``cosf`` shadows through ``cos``);
* ``resume``: the result's shadow restarts from the application value;
* ``memory-effect``: the call touches memory and keeps the shadow planes in
  step (``malloc`` clears types, ``fill_uniform_*`` marks bytes unknown);
* ``nsan-intrinsic``: user-facing sanitizer API, answered by the runtime.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

from .. import fp
from ..extended import (
    MATH_REGISTRY, Quad, exact_fma, f64_cos, f64_exp, f64_log, f64_sin, fsqrt,
)
from ..runtime.core import USER_API

BEHAVIOURS = ("registry-math", "resume", "memory-effect", "nsan-intrinsic")

LCG_MUL = 6364136223846793005
LCG_INC = 1442695040888963407
_M64 = (1 << 64) - 1


class Lcg:
    """64-bit linear congruential generator used for corpus inputs.

    ``x' = x * 6364136223846793005 + 1442695040888963407 (mod 2**64)``.  An
    ``f32`` draw is the top 24 bits of the new state times ``2**-24``; an
    ``f64`` draw is the top 53 bits times ``2**-53``.  Both lie in [0, 1)
    and are exact in their format.
    """

    def __init__(self, seed: int):
        self.state = seed & _M64

    def next_u64(self) -> int:
        self.state = (self.state * LCG_MUL + LCG_INC) & _M64
        return self.state

    def f32(self) -> float:
        return (self.next_u64() >> 40) * 2.0 ** -24

    def f64(self) -> float:
        return (self.next_u64() >> 11) * 2.0 ** -53

    def draw_ints(self, n: int, bits: int) -> list[int]:
        """``n`` consecutive draws, each the top ``bits`` of the state."""
        x, shift, out = self.state, 64 - bits, [0] * n
        for i in range(n):
            x = (x * LCG_MUL + LCG_INC) & _M64
            out[i] = x >> shift
        self.state = x
        return out


@dataclass(frozen=True)
class Builtin:
    name: str
    params: tuple[str, ...]
    ret: str
    behaviour: str
    # factory: ExecState -> callable taking the IR arguments
    bind: Callable


def _const(f: Callable) -> Callable:
    return lambda state: f


def _f32_math(f: Callable) -> Callable:
    r = fp.round_f32
    return lambda x: r(f(x))


def _print(fmt: Callable) -> Callable:
    return lambda state: (lambda x: state.write_stdout(fmt(x) + "\n"))


def format_f32(x: float) -> str:
    """Shortest decimal that reads back as the same binary32."""
    if x != x or x in (float("inf"), float("-inf")):
        return repr(x)
    for digits in range(1, 10):
        text = f"{x:.{digits}g}"
        if fp.round_f32(float(text)) == x:
            return text
    return repr(x)


def _bind_malloc(state) -> Callable:
    return state.arena.malloc


def _bind_free(state) -> Callable:
    return state.arena.free


def _bind_fill(code: str, bits: int, scale: float) -> Callable:
    size = struct.calcsize(code)

    def bind(state):
        arena = state.arena

        def fill(p: int, n: int) -> None:
            if n <= 0:
                return
            arena.check(p, n * size)
            vals = [k * scale for k in state.rng.draw_ints(n, bits)]
            struct.pack_into(f"<{n}{code}", arena.data, p, *vals)
            state.runtime.shadow.set_unknown(p, n * size)
        return fill
    return bind


def _bind_api(name: str) -> Callable:
    return lambda state: state.runtime.hook(name)


BUILTINS: dict[str, Builtin] = {}


def _add(name: str, params: tuple, ret: str, behaviour: str, bind: Callable) -> None:
    BUILTINS[name] = Builtin(name, params, ret, behaviour, bind)


_F32_APP = {
    "fabsf": abs,
    "sqrtf": _f32_math(fsqrt),
    "sinf": _f32_math(f64_sin),
    "cosf": _f32_math(f64_cos),
    "expf": _f32_math(f64_exp),
    "logf": _f32_math(f64_log),
}
_F64_APP = {"fabs": abs, "sqrt": fsqrt, "sin": f64_sin, "cos": f64_cos, "exp": f64_exp, "log": f64_log}

for _name, _f in _F32_APP.items():
    _add(_name, ("f32",), "f32", "registry-math", _const(_f))
_add("fmaf", ("f32", "f32", "f32"), "f32", "registry-math",
     _const(lambda a, b, c: exact_fma(a, b, c, fp.BINARY32)))
for _name, _f in _F64_APP.items():
    _kind = "resume" if MATH_REGISTRY[_name].resumes else "registry-math"
    _add(_name, ("f64",), "f64", _kind, _const(_f))
_add("fma", ("f64", "f64", "f64"), "f64", "resume", _const(exact_fma))
_add("fabsq", ("f128",), "f128", "registry-math", _const(abs))
_add("sqrtq", ("f128",), "f128", "registry-math", _const(Quad.sqrt))

_add("malloc", ("i64",), "ptr", "memory-effect", _bind_malloc)
_add("free", ("ptr",), "void", "memory-effect", _bind_free)
_add("fill_uniform_f32", ("ptr", "i64"), "void", "memory-effect", _bind_fill("f", 24, 2.0 ** -24))
_add("fill_uniform_f64", ("ptr", "i64"), "void", "memory-effect", _bind_fill("d", 53, 2.0 ** -53))

_add("print_f32", ("f32",), "void", "resume", _print(format_f32))
_add("print_f64", ("f64",), "void", "resume", _print(repr))
_add("print_i32", ("i32",), "void", "resume", _print(str))
_add("print_i64", ("i64",), "void", "resume", _print(str))

_add("__nsan_check_float", ("f32",), "void", "nsan-intrinsic", _bind_api("__nsan_check_float"))
_add("__nsan_check_double", ("f64",), "void", "nsan-intrinsic", _bind_api("__nsan_check_double"))
_add("__nsan_resume_float", ("f32",), "void", "nsan-intrinsic", _bind_api("__nsan_resume_float"))
_add("__nsan_resume_double", ("f64",), "void", "nsan-intrinsic", _bind_api("__nsan_resume_double"))
_add("__nsan_dump_shadow_mem", ("ptr", "i64"), "void", "nsan-intrinsic", _bind_api("__nsan_dump_shadow_mem"))

assert set(USER_API) <= set(BUILTINS)
