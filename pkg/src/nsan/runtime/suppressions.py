"""Suppression files.

One entry per line::

    # comment
    fun:KahanSum
    src:*/sparse.cc  resume-value

``fun:`` globs match frame function names; ``src:`` globs match a frame's
file, either the full path or its basename.  The optional action defaults
to ``silence``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fnmatch import fnmatchcase
from typing import Iterable

ACTIONS = ("silence", "resume-shadow", "resume-value")


@dataclass(frozen=True)
class Suppression:
    kind: str  # "fun" or "src"
    pattern: str
    action: str = "silence"
    line: int = 0

    def matches(self, frame) -> bool:
        if self.kind == "fun":
            return fnmatchcase(frame.function, self.pattern)
        if frame.loc is None:
            return False
        path = frame.loc.file
        return fnmatchcase(path, self.pattern) or fnmatchcase(os.path.basename(path), self.pattern)


class SuppressionError(ValueError):
    def __init__(self, problems: list[tuple[int, str]]):
        self.problems = problems
        super().__init__("; ".join(f"line {n}: {msg}" for n, msg in problems))


def parse_suppressions(text: str) -> list[Suppression]:
    entries, problems = [], []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        head, action = parts[0], parts[1] if len(parts) > 1 else "silence"
        if len(parts) > 2:
            problems.append((n, "too many fields"))
            continue
        kind, sep, pattern = head.partition(":")
        if not sep or kind not in ("fun", "src") or not pattern:
            problems.append((n, f"expected fun:<glob> or src:<glob>, got {head!r}"))
            continue
        if action not in ACTIONS:
            problems.append((n, f"unknown action {action!r}"))
            continue
        entries.append(Suppression(kind, pattern, action, n))
    if problems:
        raise SuppressionError(problems)
    return entries


def load_suppressions(path: str) -> list[Suppression]:
    with open(path, encoding="utf-8") as f:
        return parse_suppressions(f.read())


def match_suppression(stack: Iterable, suppressions: Iterable[Suppression]) -> Suppression | None:
    """First entry, in file order, matching any frame of ``stack``."""
    frames = list(stack)
    for s in suppressions:
        if any(s.matches(fr) for fr in frames):
            return s
    return None
