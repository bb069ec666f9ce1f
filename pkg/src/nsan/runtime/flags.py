"""Runtime tolerances and switches, plus the ``NSAN_OPTIONS`` parser."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

STRATEGIES = ("epsilon", "relative-epsilon", "both")


@dataclass
class RuntimeFlags:
    rel_epsilon_f32: float = 1e-5
    rel_epsilon_f64: float = 1e-5
    abs_epsilon_f32: float = 2.0 ** -32
    abs_epsilon_f64: float = 2.0 ** -64
    halt_on_error: bool = False
    check_loads: bool = False
    warn_on_load_mismatch: bool = False
    max_warnings: int | None = None
    comparison_strategy: str = "both"
    dedup: bool = True
    seed: int = 0x5EED

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("rel_epsilon_f32", "rel_epsilon_f64", "abs_epsilon_f32", "abs_epsilon_f64"):
            v = getattr(self, name)
            if not v >= 0:
                raise ValueError(f"{name} must be >= 0, got {v}")
        if self.comparison_strategy not in STRATEGIES:
            raise ValueError(f"comparison_strategy must be one of {', '.join(STRATEGIES)}")
        if self.max_warnings is not None and self.max_warnings < 0:
            raise ValueError("max_warnings must be >= 0")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def rel_epsilon(self, vtype: str) -> float:
        return self.rel_epsilon_f32 if vtype == "f32" else self.rel_epsilon_f64

    def abs_epsilon(self, vtype: str) -> float:
        return self.abs_epsilon_f32 if vtype == "f32" else self.abs_epsilon_f64


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int(text: str) -> int:
    return int(text, 0)


# option name -> (fields it sets, value parser)
OPTIONS = {
    "rel_epsilon": (("rel_epsilon_f32", "rel_epsilon_f64"), float),
    "rel_epsilon_f32": (("rel_epsilon_f32",), float),
    "rel_epsilon_f64": (("rel_epsilon_f64",), float),
    "abs_epsilon": (("abs_epsilon_f32", "abs_epsilon_f64"), float),
    "abs_epsilon_f32": (("abs_epsilon_f32",), float),
    "abs_epsilon_f64": (("abs_epsilon_f64",), float),
    "halt_on_error": (("halt_on_error",), _parse_bool),
    "check_loads": (("check_loads",), _parse_bool),
    "warn_on_load_mismatch": (("warn_on_load_mismatch",), _parse_bool),
    "max_warnings": (("max_warnings",), _parse_int),
    "comparison_strategy": (("comparison_strategy",), str),
    "dedup": (("dedup",), _parse_bool),
    "seed": (("seed",), _parse_int),
}


def parse_options(text: str) -> dict[str, object]:
    """Parse ``key=value`` pairs separated by commas (or colons).

    Returns a mapping of option names to parsed values.  Keys outside
    :data:`OPTIONS` are kept as strings so the driver can route them
    (``suppressions``, ``error_exit_code``, ``check_*`` pass switches).
    """
    out: dict[str, object] = {}
    for item in text.replace(":", ",").split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ValueError(f"malformed option {item!r} (expected key=value)")
        key, value = (s.strip() for s in item.split("=", 1))
        spec = OPTIONS.get(key)
        out[key] = spec[1](value) if spec else value
    return out


def apply_options(flags: RuntimeFlags, options: dict[str, object]) -> RuntimeFlags:
    """Return a copy of ``flags`` with recognised options applied."""
    changes = {}
    for key, value in options.items():
        spec = OPTIONS.get(key)
        if spec is None:
            continue
        for name in spec[0]:
            changes[name] = value
    return dataclasses.replace(flags, **changes)
