"""Per-byte shadow types after a mix of float and double stores.

Drives the shadow memory directly, then runs the equivalent IR program and
shows that the instrumented dump agrees.
"""

import sys

from nsan import corpus
from nsan.extended import Quad
from nsan.interp import run
from nsan.runtime import Arena, ShadowMemory
from nsan.transform import instrument_module

STORES = [("f32", 0x00), ("f64", 0x04), ("f64", 0x20), ("f32", 0x23), ("f32", 0x28), ("f32", 0x2C)]


def main() -> None:
    arena = Arena()
    shadow = ShadowMemory(arena)
    buf = arena.malloc(48)
    for vtype, off in STORES:
        shadow.store(buf + off, vtype, 1.0 if vtype == "f32" else Quad.from_int(1))
        print(f"{vtype} at +0x{off:02x}")
    print()
    print(shadow.dump(buf, 48))
    for off in (0x20, 0x23):
        print(f"double at +0x{off:02x}: {shadow.type_state(buf + off, 'f64')}")
    print()
    print("the same stores from IR:")
    run(instrument_module(corpus.load("shadow_layout")), stderr=sys.stdout.write)


if __name__ == "__main__":
    main()
