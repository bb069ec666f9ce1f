"""Shipped example programs and the manifest of what each should report."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

from ..ir.core import Module, SourceLoc
from ..ir.parser import parse_module


@dataclass(frozen=True)
class ExpectedSite:
    kind: str
    loc: SourceLoc
    min_error: float


@dataclass
class Expectation:
    program: str
    sites: list[ExpectedSite] = field(default_factory=list)
    resumed: int | None = None
    args: list[str] = field(default_factory=list)


def _files():
    return resources.files(__name__)


def programs() -> list[str]:
    return sorted(p.name[:-4] for p in _files().iterdir() if p.name.endswith(".nir"))


def source(name: str) -> str:
    return _files().joinpath(f"{name}.nir").read_text(encoding="utf-8")


def load(name: str) -> Module:
    return parse_module(source(name))


def parse_loc(text: str) -> SourceLoc:
    """``file:line:col`` or ``file:line``."""
    parts = text.rsplit(":", 2)
    if len(parts) == 3 and parts[1].isdigit() and parts[2].isdigit():
        return SourceLoc(parts[0], int(parts[1]), int(parts[2]))
    file, line = text.rsplit(":", 1)
    return SourceLoc(file, int(line))


def parse_manifest(text: str) -> dict[str, Expectation]:
    out: dict[str, Expectation] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split()
        if not line:
            continue
        prog, what, rest = line[0], line[1] if len(line) > 1 else "", line[2:]
        e = out.setdefault(prog, Expectation(prog))
        if what == "none" and not rest:
            continue
        if what == "resumed" and len(rest) == 1:
            e.resumed = int(rest[0])
        elif what == "args":
            e.args = rest
        elif what and len(rest) == 2:
            e.sites.append(ExpectedSite(what, parse_loc(rest[0]), float(rest[1])))
        else:
            raise ValueError(f"manifest line {n}: cannot parse {raw.strip()!r}")
    return out


def manifest() -> dict[str, Expectation]:
    return parse_manifest(manifest_text())


def manifest_text() -> str:
    return _files().joinpath("manifest.txt").read_text(encoding="utf-8")
