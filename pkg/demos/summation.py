"""Naive versus compensated summation of a million floats.

Both sums run instrumented on the same seeded inputs.  The naive loop drifts
far enough from its binary64 shadow to trip the default tolerance at its
return; the compensated loop stays within it.
"""

import sys

from nsan import corpus
from nsan.interp import run
from nsan.transform import instrument_module


def main() -> None:
    for name in ("naive_sum", "kahan_sum"):
        lines: list[str] = []
        result = run(instrument_module(corpus.load(name)), stderr=lines.append)
        print(f"{name}: result {result.value!r}, {len(result.warnings)} warning(s)")
        for w in result.warnings:
            print(f"  {w.kind.label} at {w.loc}: relative error {w.percent}")
    print()
    print("first report in full:")
    run(instrument_module(corpus.load("naive_sum")), stderr=sys.stdout.write)


if __name__ == "__main__":
    main()
