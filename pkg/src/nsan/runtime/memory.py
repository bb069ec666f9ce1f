"""Application memory and its shadow planes.

Application bytes live in one flat ``bytearray``; addresses are plain
indices into it.  The first ``BASE`` bytes are never allocated, so null and
small integers (function ids live there) always trap on dereference.  A
fixed stack region follows, then a heap that grows on demand.

Shadow state mirrors the arena byte for byte:

* the type plane holds one byte per application byte, ``kind << 4 | pos``
  with ``0`` meaning unknown;
* the value plane holds two bytes per application byte.  The shadow of an
  ``f32`` at ``A`` is a little-endian binary64 at ``2*A``; the shadow of an
  ``f64`` is a binary128 at ``2*A``.  Copying ``n`` application bytes copies
  ``n`` type bytes and ``2n`` value bytes, nothing else.
"""

from __future__ import annotations

import struct

from ..extended import Quad

BASE = 0x10000
STACK_SIZE = 1 << 20
CODE_BASE = 0x1000
CODE_STRIDE = 0x10

KIND_UNKNOWN, KIND_F32, KIND_F64 = 0, 1, 2
KIND_OF = {"f32": KIND_F32, "f64": KIND_F64}
KIND_CHAR = {KIND_F32: "f", KIND_F64: "d"}

F32_SEQ = bytes((KIND_F32 << 4) | k for k in range(4))
F64_SEQ = bytes((KIND_F64 << 4) | k for k in range(8))
TYPE_SEQ = {"f32": F32_SEQ, "f64": F64_SEQ}

_D = struct.Struct("<d")


class Trap(Exception):
    """An application-level fault (bad address, integer division by zero, ...)."""


class Arena:
    """Byte-addressed application memory with an allocation table.

    ``live`` has one byte per address, nonzero while the byte belongs to an
    allocation; every access checks it, so stray pointers trap instead of
    touching a neighbour (or the shadow planes).  Dead bytes always have
    unknown shadow type: claiming, freeing and popping the stack all reset
    the type plane.
    """

    def __init__(self, stack_size: int = STACK_SIZE):
        self.stack_base = BASE
        self.heap_base = BASE + stack_size
        self.data = bytearray(self.heap_base)
        self.live = bytearray(self.heap_base)
        self.sp = BASE
        self.brk = self.heap_base
        self.heap_blocks: dict[int, int] = {}
        self.shadows: list[ShadowMemory] = []

    # -- allocation ---------------------------------------------------------

    def _claim(self, addr: int, size: int) -> None:
        end = addr + size
        self.data[addr:end] = bytes(size)
        self.live[addr:end] = b"\x01" * size
        for s in self.shadows:
            s.reset(addr, size)

    def _grow(self, end: int) -> None:
        if end <= len(self.data):
            return
        extra = max(end - len(self.data), len(self.data) // 2)
        self.data.extend(bytes(extra))
        self.live.extend(bytes(extra))
        for s in self.shadows:
            s.grow(len(self.data))

    def alloca(self, size: int, align: int = 8) -> int:
        if size < 0:
            raise Trap("negative alloca size")
        addr = -(-self.sp // align) * align
        if addr + size > self.heap_base:
            raise Trap("stack overflow")
        self.sp = addr + max(size, 1)
        self._claim(addr, size)
        return addr

    def release(self, mark: int) -> None:
        """Pop every stack allocation made since ``mark``."""
        if mark < self.sp:
            n = self.sp - mark
            self.live[mark:self.sp] = bytes(n)
            for s in self.shadows:
                s.reset(mark, n)
            self.sp = mark

    def malloc(self, size: int, align: int = 16) -> int:
        if size < 0:
            raise Trap("negative malloc size")
        addr = -(-self.brk // align) * align
        end = addr + size
        self._grow(end)
        # one dead byte after each block catches off-by-one overruns
        self.brk = end + 1
        self._claim(addr, size)
        self.heap_blocks[addr] = size
        return addr

    def free(self, addr: int) -> None:
        if addr == 0:
            return
        size = self.heap_blocks.pop(addr, None)
        if size is None:
            raise Trap(f"free of invalid pointer 0x{addr:x}")
        self.live[addr:addr + size] = bytes(size)
        for s in self.shadows:
            s.reset(addr, size)

    # -- access -------------------------------------------------------------

    def check(self, addr: int, size: int) -> None:
        if size == 0:
            return
        if addr < BASE or self.live.count(1, addr, addr + size) != size:
            raise Trap(f"invalid access of {size} bytes at 0x{addr:x}")

    def is_live(self, addr: int, size: int) -> bool:
        try:
            self.check(addr, size)
        except Trap:
            return False
        return True

    def read(self, addr: int, size: int) -> bytes:
        self.check(addr, size)
        return bytes(self.data[addr:addr + size])

    def write(self, addr: int, raw: bytes) -> None:
        self.check(addr, len(raw))
        self.data[addr:addr + len(raw)] = raw

    def memcpy(self, dst: int, src: int, n: int) -> None:
        if n < 0:
            raise Trap("negative memcpy size")
        self.check(src, n)
        self.check(dst, n)
        self.data[dst:dst + n] = self.data[src:src + n]

    def memset(self, dst: int, byte: int, n: int) -> None:
        if n < 0:
            raise Trap("negative memset size")
        self.check(dst, n)
        self.data[dst:dst + n] = bytes([byte & 0xFF]) * n

    @property
    def allocated_bytes(self) -> int:
        return self.live.count(1)


class ShadowMemory:
    """Type plane (M_t) and value plane (M_s) over an :class:`Arena`."""

    def __init__(self, arena: Arena):
        self.arena = arena
        self.types = bytearray(len(arena.data))
        self.values = bytearray(2 * len(arena.data))
        arena.shadows.append(self)

    def grow(self, size: int) -> None:
        self.types.extend(bytes(size - len(self.types)))
        self.values.extend(bytes(2 * size - len(self.values)))

    def reset(self, addr: int, size: int) -> None:
        self.types[addr:addr + size] = bytes(size)

    @property
    def footprint(self) -> int:
        """Shadow bytes held per the current arena size."""
        return len(self.types) + len(self.values)

    # -- typed access ---------------------------------------------------------

    def store(self, addr: int, vtype: str, shadow) -> None:
        """Record ``shadow`` as the shadow of a ``vtype`` stored at ``addr``."""
        seq = TYPE_SEQ[vtype]
        self.arena.check(addr, len(seq))
        self.types[addr:addr + len(seq)] = seq
        if vtype == "f32":
            _D.pack_into(self.values, 2 * addr, shadow)
        else:
            self.values[2 * addr:2 * addr + 16] = shadow.to_bytes()

    def type_state(self, addr: int, vtype: str) -> str:
        """``'valid'``, ``'unknown'`` (no FP type info) or ``'partial'``."""
        seq = TYPE_SEQ[vtype]
        self.arena.check(addr, len(seq))
        t = self.types[addr:addr + len(seq)]
        if t == seq:
            return "valid"
        return "partial" if any(t) else "unknown"

    def is_valid(self, addr: int, vtype: str) -> bool:
        return self.type_state(addr, vtype) == "valid"

    def raw_shadow(self, addr: int, vtype: str):
        """The value-plane slot at ``addr`` regardless of validity."""
        if vtype == "f32":
            return _D.unpack_from(self.values, 2 * addr)[0]
        return Quad.from_bytes(self.values[2 * addr:2 * addr + 16])

    def load(self, addr: int, vtype: str, app_value: float) -> tuple[object, str]:
        """``(shadow, provenance)`` with provenance ``'shadow'`` or ``'extended'``."""
        if self.is_valid(addr, vtype):
            return self.raw_shadow(addr, vtype), "shadow"
        return (app_value if vtype == "f32" else Quad.from_float(app_value)), "extended"

    def set_unknown(self, addr: int, size: int) -> None:
        if size <= 0:
            return
        self.arena.check(addr, size)
        self.types[addr:addr + size] = bytes(size)

    def copy(self, dst: int, src: int, size: int) -> None:
        if size <= 0:
            return
        self.arena.check(src, size)
        self.arena.check(dst, size)
        # slice assignment goes through a temporary, so overlap is safe
        self.types[dst:dst + size] = self.types[src:src + size]
        self.values[2 * dst:2 * (dst + size)] = self.values[2 * src:2 * (src + size)]

    def dump(self, addr: int, size: int) -> str:
        """Render the type plane, eight bytes per row."""
        self.arena.check(addr, size)
        rows = []
        for row in range(addr, addr + size, 8):
            cells = []
            for a in range(row, min(row + 8, addr + size)):
                t = self.types[a]
                kind = KIND_CHAR.get(t >> 4)
                cells.append(f"{kind}{t & 0xF:x}" if kind else "__")
            rows.append(f"0x{row:08x}:    " + " ".join(cells))
        return "\n".join(rows) + ("\n" if rows else "")
