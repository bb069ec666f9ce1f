import math

import pytest

from nsan.extended import ABS_ONLY, CATEGORICAL_MISMATCH, Quad
from nsan.ir import SourceLoc
from nsan.runtime import (
    BASE, Arena, CheckKind, Frame, Halt, Runtime, RuntimeFlags, ShadowMemory, SuppressionError,
    Trap, WarningEvent, apply_options, capture_stack, eval_fcmp, format_warning, match_suppression,
    parse_options, parse_suppressions,
)


@pytest.fixture
def mem():
    arena = Arena(stack_size=4096)
    return arena, ShadowMemory(arena)


# -- arena ------------------------------------------------------------------------


def test_null_and_low_addresses_trap(mem):
    arena, _ = mem
    for addr in (0, 8, BASE - 1):
        with pytest.raises(Trap):
            arena.read(addr, 1)


def test_heap_blocks_are_guarded(mem):
    arena, _ = mem
    p = arena.malloc(8)
    arena.write(p, b"\x01" * 8)
    with pytest.raises(Trap):
        arena.read(p + 8, 1)
    arena.free(p)
    with pytest.raises(Trap):
        arena.read(p, 1)
    with pytest.raises(Trap):
        arena.free(p)
    arena.free(0)


def test_heap_grows_on_demand(mem):
    arena, shadow = mem
    p = arena.malloc(1 << 16)
    shadow.store(p + (1 << 16) - 8, "f64", Quad.from_int(3))
    assert shadow.is_valid(p + (1 << 16) - 8, "f64")
    assert shadow.footprint == 3 * len(arena.data)


def test_stack_overflow_and_release(mem):
    arena, shadow = mem
    mark = arena.sp
    p = arena.alloca(16)
    shadow.store(p, "f64", Quad.from_int(1))
    arena.release(mark)
    with pytest.raises(Trap):
        arena.read(p, 1)
    q = arena.alloca(16)
    assert q == p and shadow.type_state(q, "f64") == "unknown"
    with pytest.raises(Trap, match="stack overflow"):
        arena.alloca(1 << 20)


def test_free_resets_shadow_types(mem):
    arena, shadow = mem
    p = arena.malloc(8)
    shadow.store(p, "f32", 1.0)
    arena.free(p)
    q = arena.malloc(8)
    assert shadow.type_state(q, "f32") == "unknown"


def test_memcpy_and_memset(mem):
    arena, _ = mem
    p = arena.malloc(8)
    arena.memset(p, 0x1AB, 4)
    arena.memcpy(p + 4, p, 4)
    assert arena.read(p, 8) == b"\xab" * 8
    with pytest.raises(Trap):
        arena.memcpy(p + 6, p, 4)


# -- shadow memory -----------------------------------------------------------------


def test_store_then_load(mem):
    arena, shadow = mem
    p = arena.malloc(16)
    q = Quad.from_hex("0x1.08b1968a637df0f4p-44")
    shadow.store(p, "f64", q)
    assert shadow.load(p, "f64", 1.0) == (q, "shadow")
    assert shadow.load(p + 8, "f64", 2.0) == (Quad.from_int(2), "extended")
    shadow.store(p + 8, "f32", 0.1)
    assert shadow.load(p + 8, "f32", 0.0) == (0.1, "shadow")


def test_type_states(mem):
    arena, shadow = mem
    p = arena.malloc(16)
    shadow.store(p, "f64", Quad.from_int(1))
    assert shadow.type_state(p, "f64") == "valid"
    assert shadow.type_state(p, "f32") == "partial"
    assert shadow.type_state(p + 4, "f32") == "partial"
    assert shadow.type_state(p + 8, "f64") == "unknown"
    shadow.set_unknown(p + 2, 1)
    assert shadow.type_state(p, "f64") == "partial"


def test_shadow_copy_moves_types_and_values(mem):
    arena, shadow = mem
    p = arena.malloc(32)
    shadow.store(p, "f64", Quad.from_int(7))
    shadow.copy(p + 16, p, 8)
    assert shadow.load(p + 16, "f64", 0.0) == (Quad.from_int(7), "shadow")
    # overlapping copy behaves like memmove
    shadow.copy(p + 4, p, 8)
    assert shadow.type_state(p + 4, "f64") == "valid"


def test_dump_format(mem):
    arena, shadow = mem
    p = arena.malloc(12)
    shadow.store(p, "f32", 1.0)
    shadow.store(p + 4, "f64", Quad.from_int(1))
    lines = shadow.dump(p, 12).splitlines()
    assert lines[0] == f"0x{p:08x}:    f0 f1 f2 f3 d0 d1 d2 d3"
    assert lines[1] == f"0x{p + 8:08x}:    d4 d5 d6 d7"


# -- flags -------------------------------------------------------------------------


def test_flag_validation():
    with pytest.raises(ValueError):
        RuntimeFlags(rel_epsilon_f64=-1.0)
    with pytest.raises(ValueError):
        RuntimeFlags(rel_epsilon_f32=math.nan)
    with pytest.raises(ValueError):
        RuntimeFlags(comparison_strategy="ulp")
    with pytest.raises(ValueError):
        RuntimeFlags(max_warnings=-1)


def test_parse_and_apply_options():
    opts = parse_options("rel_epsilon=1e-3:halt_on_error=1, max_warnings=0x10,suppressions=s.txt")
    assert opts == {"rel_epsilon": 1e-3, "halt_on_error": True, "max_warnings": 16, "suppressions": "s.txt"}
    f = apply_options(RuntimeFlags(), opts)
    assert f.rel_epsilon("f32") == f.rel_epsilon("f64") == 1e-3
    assert f.halt_on_error and f.max_warnings == 16
    with pytest.raises(ValueError):
        parse_options("dedup=maybe")
    with pytest.raises(ValueError):
        parse_options("rel_epsilon")
    with pytest.raises(ValueError):
        apply_options(RuntimeFlags(), {"abs_epsilon": -1.0})


# -- suppressions ------------------------------------------------------------------


def frame(fn="KahanSum", file="src/sum.c"):
    return Frame(0, fn, 0x1000, SourceLoc(file, 3, 1))


def test_suppression_parsing_and_matching():
    sups = parse_suppressions("# c\n\nfun:Kahan*\nsrc:*/sparse.cc resume-value # trailing\n")
    assert [s.action for s in sups] == ["silence", "resume-value"]
    assert match_suppression([frame()], sups) is sups[0]
    assert match_suppression([frame("f", "/x/sparse.cc")], sups) is sups[1]
    assert match_suppression([frame("f", "other.c")], sups) is None
    # basename matches too
    assert parse_suppressions("src:sum.c")[0].matches(frame())


def test_suppression_errors_report_every_line():
    with pytest.raises(SuppressionError) as info:
        parse_suppressions("fun:a\nbogus\nfun:b explode\nfun:c silence extra\n")
    assert [n for n, _ in info.value.problems] == [2, 3, 4]


# -- checks and reporting ----------------------------------------------------------


def runtime(**flags):
    lines = []
    rt = Runtime(Arena(stack_size=4096), RuntimeFlags(**flags), err=lines.append,
                 frames=[["Example", SourceLoc("x.c", 6, 10), 0x1010]])
    return rt, lines


def test_consistency_strategies():
    rt, _ = runtime()
    assert rt.consistent(1.0, Quad.from_float(1.0), "f64")[0]
    assert rt.consistent(1.0, Quad.from_float(1.0 + 1e-9), "f64")[0]
    assert not rt.consistent(1.0, Quad.from_float(1.1), "f64")[0]
    # tiny absolute difference, huge relative one
    tiny = (2.0 ** -70, Quad.from_float(2.0 ** -69), "f64")
    assert runtime()[0].consistent(*tiny)[0]
    assert not runtime(comparison_strategy="relative-epsilon")[0].consistent(*tiny)[0]
    assert not runtime(comparison_strategy="epsilon")[0].consistent(1e10, Quad.from_float(1e10 + 1), "f64")[0]
    ok, _, err = rt.consistent(1.0, Quad.from_float(math.nan), "f64")
    assert not ok and err is CATEGORICAL_MISMATCH
    assert rt.consistent(1e-30, Quad.from_float(0.0), "f64")[2] is ABS_ONLY


def test_warning_layout():
    rt, lines = runtime()
    rt.check_value(CheckKind.STORE, "f64", float.fromhex("0x1.a00b086c4888fp-46"),
                   Quad.from_hex("0x1.08b1968a637df0f4p-44"), 0x10008)
    assert lines[0].splitlines() == [
        "WARNING: NumericalSanitizer: inconsistent shadow results while checking store to address 0x10008",
        "double       precision  (native): dec: 0.00000000000002309503  hex: 0x1.a00b086c4888fp-46",
        "__float128   precision  (shadow): dec: 0.00000000000005877381  hex: 0x1.08b1968a637df0f4p-44",
        "shadow truncated to double      : dec: 0.00000000000005877381  hex: 0x1.08b1968a637dfp-44",
        "Relative error: 60.70%",
        "    #0 0x1010 in Example x.c:6:10",
    ]


def test_fcmp_warning_layout():
    rt, lines = runtime()
    assert rt.check_fcmp("olt", "f32", 1.0, 1.0, 1.0, 1.0) is None
    ev = rt.check_fcmp("olt", "f32", 1.0, 1.0, 1.0 - 2.0 ** -30, 1.0)
    assert ev.results == (False, True)
    head, native, shadow = lines[0].splitlines()[:3]
    assert head.endswith("comparison results depend on precision")
    assert native.startswith("float        precision  (native): 1.00000000000000000000 olt")
    assert native.split("-> ")[1].startswith("false")
    assert shadow.split("-> ")[1].startswith("true")


def test_dedup_and_max_warnings():
    rt, lines = runtime(max_warnings=1)
    for _ in range(3):
        rt.check_value(CheckKind.RET, "f32", 1.0, 2.0)
    assert len(rt.warnings) == 1 and rt.warnings[0].count == 3
    rt.check_value(CheckKind.STORE, "f32", 1.0, 2.0)
    assert len(rt.warnings) == 2 and len(lines) == 1
    rt2, lines2 = runtime(dedup=False)
    for _ in range(3):
        rt2.check_value(CheckKind.RET, "f32", 1.0, 2.0)
    assert len(rt2.warnings) == len(lines2) == 3


def test_halt_on_error():
    rt, lines = runtime(halt_on_error=True)
    with pytest.raises(Halt) as info:
        rt.check_value(CheckKind.ARG, "f32", 1.0, 2.0)
    assert info.value.event.kind == CheckKind.ARG and len(lines) == 1


def test_suppressed_warnings_and_resume_value():
    rt, lines = runtime()
    rt.suppressions = parse_suppressions("fun:Example resume-value")
    s = rt.check_value(CheckKind.STORE, "f32", 1.0, 2.0)
    assert s == 1.0 and not lines and not rt.warnings
    assert len(rt.suppressed) == 1 and rt.resumed[-1].reason == "suppression"
    rt.suppressions = parse_suppressions("fun:Example")
    assert rt.check_value(CheckKind.RET, "f32", 1.0, 2.0) == 2.0


def test_argument_protocol():
    rt, _ = runtime()
    rt.set_arg_tag(0x1020)
    rt.push_arg(Quad.from_int(5))
    assert rt.load_args(0x1020, [5.0], ["f64"]) == [Quad.from_int(5)]
    # tag cleared: the next callee sees extensions
    assert rt.load_args(0x1020, [4.0], ["f64"]) == [Quad.from_int(4)]
    rt.set_arg_tag(0x1030)
    rt.push_arg(9.0)
    assert rt.load_args(0x1020, [3.0], ["f32"]) == [3.0]
    assert rt.stats["args_shadow"] == 1 and rt.stats["args_extended"] == 2


def test_return_protocol():
    rt, _ = runtime()
    rt.set_return(0x1020, Quad.from_int(8))
    assert rt.take_return(0x1020, 8.0, "f64") == Quad.from_int(8)
    # reading clears the tag
    assert rt.take_return(0x1020, 3.0, "f64") == Quad.from_int(3)
    rt.set_return(0x1030, 1.5)
    assert rt.take_return(0x1020, 2.0, "f32") == 2.0


def test_eval_fcmp_predicates():
    nan = math.nan
    assert eval_fcmp("olt", 1.0, 2.0) and not eval_fcmp("olt", nan, 2.0)
    assert eval_fcmp("ult", nan, 2.0) and eval_fcmp("uno", nan, 1.0)
    assert eval_fcmp("ord", 1.0, 1.0) and not eval_fcmp("one", nan, 1.0)
    assert eval_fcmp("une", nan, nan) and not eval_fcmp("oeq", nan, nan)
    assert eval_fcmp("oge", Quad.from_int(2), Quad.from_int(2))
    assert eval_fcmp("true", nan, nan) and not eval_fcmp("false", 1.0, 1.0)


def test_capture_stack_is_innermost_first():
    st = capture_stack([["main", None, 0x1000], ["f", SourceLoc("a.c", 1, 1), 0x1010]])
    assert [f.function for f in st] == ["f", "main"]
    assert str(st[1]) == "    #1 0x1000 in main <unknown>"


def test_abs_only_warning_reports_absolute_error():
    ev = WarningEvent(CheckKind.RET, "f64", 1e-300, Quad.from_float(0.0), 0.0, ABS_ONLY)
    assert "Relative error: abs-only (absolute error 1e-300)" in format_warning(ev)
