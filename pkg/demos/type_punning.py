"""Byte-level writes invalidate shadows instead of leaving them stale.

``Example`` stores ``v / 0.2 - 3.0`` and then flips the sign of the stored
double through its top byte.  The store is reported (the subtraction cancels
near 0.6), and the load after the flip finds a broken type sequence, so its
shadow restarts from the flipped value rather than the stale pre-flip one.
"""

import sys

from nsan import corpus
from nsan.interp import run
from nsan.transform import instrument_module


def main() -> None:
    m = instrument_module(corpus.load("type_punning"))
    for v in ("0.6", "0.7"):
        r = run(m, args=[v], stderr=sys.stdout.write)
        print(f"v = {v}: returned {r.value!r}, {len(r.warnings)} warning(s), "
              f"resumed at {[str(e.loc) for e in r.resumed]}")
        print()


if __name__ == "__main__":
    main()
