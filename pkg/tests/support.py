"""Shared helpers and independent oracles for the test suite.

The oracles here deliberately avoid the package's own numeric code: the
generator is re-derived from its recurrence, sums are exact rationals,
extended arithmetic is checked with mpmath and shadow validity with a
per-byte label model.
"""

from __future__ import annotations

import struct
from fractions import Fraction

import mpmath
import numpy as np

from nsan import corpus
from nsan.interp import run
from nsan.ir import parse_module
from nsan.runtime import RuntimeFlags
from nsan.transform import InstrumentConfig, instrument_module

SEED = 0x5EED
MUL = 6364136223846793005
INC = 1442695040888963407

# verdict lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE: list[str] = []


# -- running programs ----------------------------------------------------------


def run_module(m, instrument=True, cfg=None, **kw):
    if instrument:
        m = instrument_module(m, cfg or InstrumentConfig())
    return run(m, **kw)


def run_text(text: str, instrument=True, cfg=None, **kw):
    return run_module(parse_module(text), instrument, cfg, **kw)


def run_corpus(name: str, instrument=True, cfg=None, flags: RuntimeFlags | None = None, **kw):
    exp = corpus.manifest()[name]
    return run_module(corpus.load(name), instrument, cfg, args=exp.args, flags=flags, **kw)


def value_bits(value) -> bytes:
    """Bit-level identity for run results, including NaN payloads and -0.0."""
    if isinstance(value, float):
        return struct.pack("<d", value)
    if isinstance(value, tuple):
        return b"|".join(value_bits(v) for v in value)
    if hasattr(value, "to_bytes") and not isinstance(value, int):
        return value.to_bytes()
    return repr(value).encode()


def observable(result) -> tuple:
    """Everything the application itself can observe about a run."""
    trap = result.trap.message if result.trap else None
    return value_bits(result.value), result.stdout, trap


# -- input generator -------------------------------------------------------------


def reference_draws(n: int, bits: int, seed: int = SEED) -> np.ndarray:
    """Top ``bits`` of successive LCG states, as unsigned integers."""
    out = np.empty(n, dtype=np.uint64)
    x = seed
    for i in range(n):
        x = (x * MUL + INC) % (1 << 64)
        out[i] = x >> (64 - bits)
    return out


def summation_oracle(n: int = 10**6, seed: int = SEED):
    """``(exact_sum, naive_f32_sum)`` for ``n`` seeded uniform binary32 inputs.

    The exact sum is a rational; the naive sum accumulates left to right in
    binary32 with numpy.
    """
    k = reference_draws(n, 24, seed)
    exact = Fraction(int(k.sum(dtype=np.uint64)), 1 << 24)
    values = k.astype(np.float32) * np.float32(2.0 ** -24)
    naive = float(np.add.accumulate(values, dtype=np.float32)[-1])
    return exact, naive


# -- extended-precision oracle ---------------------------------------------------


def quad_to_mpf(q) -> mpmath.mpf:
    if q.is_nan():
        return mpmath.nan
    if q.is_inf():
        return -mpmath.inf if q.neg else mpmath.inf
    return mpmath.mpf((-q.m if q.neg else q.m, q.e))


def ulps_of_106(approx: mpmath.mpf, exact: mpmath.mpf) -> mpmath.mpf:
    """``|approx - exact|`` in units of ``2**(floor(log2|exact|) - 105)``."""
    if exact == 0:
        return mpmath.mpf(0) if approx == 0 else mpmath.inf
    man, ex = exact.man_exp
    top = ex + int(man).bit_length() - 1
    return abs(approx - exact) / mpmath.ldexp(1, top - 105)


# -- shadow validity byte model --------------------------------------------------

TYPED = {"f32": 4, "f64": 8}
UNTYPED = {"i8": 1, "i32": 4, "i64": 8}


class ByteModel:
    """Per-byte labels ``(type, position, writer)`` or ``None``.

    A typed load of ``T`` at ``A`` is valid exactly when byte ``A + k`` is
    labelled ``(T, k, _)`` for every ``k``; it is ``partial`` when some byte
    in range carries a label but the sequence is incomplete.
    """

    def __init__(self, size: int = 16):
        self.labels: list = [None] * size

    def write(self, kind: str, addr: int, writer: int) -> None:
        if kind in TYPED:
            for k in range(TYPED[kind]):
                self.labels[addr + k] = (kind, k, writer)
        else:
            for k in range(UNTYPED[kind]):
                self.labels[addr + k] = None

    def copy(self, dst: int, src: int, n: int) -> None:
        self.labels[dst:dst + n] = self.labels[src:src + n]

    def clear(self, addr: int, n: int) -> None:
        self.labels[addr:addr + n] = [None] * n

    def state(self, kind: str, addr: int) -> str:
        window = self.labels[addr:addr + TYPED[kind]]
        if all(lab is not None and lab[:2] == (kind, k) for k, lab in enumerate(window)):
            return "valid"
        return "partial" if any(lab is not None for lab in window) else "unknown"

    def writer(self, kind: str, addr: int) -> int | None:
        """The single store all bytes came from, if the load is valid."""
        window = self.labels[addr:addr + TYPED[kind]]
        writers = {lab[2] for lab in window if lab is not None}
        return writers.pop() if self.state(kind, addr) == "valid" and len(writers) == 1 else None


def all_writes(size: int = 16) -> list[tuple[str, int]]:
    out = []
    for kind, n in list(TYPED.items()) + list(UNTYPED.items()):
        out += [(kind, a) for a in range(size - n + 1)]
    return out


def all_queries(size: int = 16) -> list[tuple[str, int]]:
    return [(kind, a) for kind, n in TYPED.items() for a in range(size - n + 1)]
