"""Property tests against the per-byte label model and the program generators."""

from hypothesis import given, settings, strategies as st

import progen
import support
from nsan.extended import Quad
from nsan.ir import parse_module
from nsan.runtime import Arena, RuntimeFlags, ShadowMemory
from nsan.transform import InstrumentConfig

SIZE = 24
typed_kinds = st.sampled_from(sorted(support.TYPED))
any_kind = st.sampled_from(sorted(support.TYPED) + sorted(support.UNTYPED))
offset = st.integers(min_value=0, max_value=SIZE - 8)
length = st.integers(min_value=0, max_value=12)

op = st.one_of(
    st.tuples(st.just("write"), any_kind, offset),
    st.tuples(st.just("copy"), offset, offset, length),
    st.tuples(st.just("clear"), offset, length),
)


def shadow_for(kind: str, writer: int):
    return float(writer) + 0.5 if kind == "f32" else Quad.from_int(writer)


@settings(max_examples=300, deadline=None)
@given(st.lists(op, max_size=25))
def test_shadow_memory_matches_label_model(ops):
    arena = Arena(stack_size=4096)
    shadow = ShadowMemory(arena)
    base = arena.malloc(SIZE)
    model = support.ByteModel(SIZE)
    for writer, o in enumerate(ops):
        if o[0] == "write":
            _, kind, a = o
            if kind in support.TYPED:
                shadow.store(base + a, kind, shadow_for(kind, writer))
            else:
                shadow.set_unknown(base + a, support.UNTYPED[kind])
            model.write(kind, a, writer)
        elif o[0] == "copy":
            _, dst, src, n = o
            n = min(n, SIZE - dst, SIZE - src)
            shadow.copy(base + dst, base + src, n)
            model.copy(dst, src, n)
        else:
            _, a, n = o
            n = min(n, SIZE - a)
            shadow.set_unknown(base + a, n)
            model.clear(a, n)
    for kind, a in support.all_queries(SIZE):
        assert shadow.type_state(base + a, kind) == model.state(kind, a)
        w = model.writer(kind, a)
        if w is not None:
            assert shadow.load(base + a, kind, 0.0) == (shadow_for(kind, w), "shadow")


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_warning_logs_are_deterministic(seed):
    text = progen.random_program(seed)
    logs = []
    for _ in range(2):
        lines = []
        support.run_text(text, stderr=lines.append)
        logs.append("".join(lines))
    assert logs[0] == logs[1]


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=10**6),
       st.sampled_from([0.0, 1e-300, 1e-12]),
       st.sampled_from(["epsilon", "relative-epsilon", "both"]))
def test_exact_programs_never_warn(seed, eps, strategy):
    g = progen.random_call_graph(seed)
    flags = RuntimeFlags(rel_epsilon_f32=eps, rel_epsilon_f64=eps, abs_epsilon_f32=0.0,
                         abs_epsilon_f64=0.0, comparison_strategy=strategy)
    r = support.run_text(g.text, flags=flags)
    assert r.ok and not r.warnings


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=10**6),
       st.fixed_dictionaries({k: st.booleans() for k in
                              ("check_stores", "check_ret", "check_args", "check_fcmp", "check_loads")}))
def test_any_check_selection_is_transparent(seed, checks):
    m = parse_module(progen.random_program(seed))
    plain = support.run_module(m, instrument=False)
    if not any(checks.values()):
        checks["check_fcmp"] = True
    inst = support.run_module(parse_module(progen.random_program(seed)), cfg=InstrumentConfig(**checks))
    assert support.observable(plain) == support.observable(inst)
