"""Command-line driver.

    nsan run FILE [options]          instrument, execute, report
    nsan instrument FILE [-o OUT]    print the instrumented module
    nsan verify FILE                 check a module and report diagnostics
    nsan dump-corpus [NAME] [-o DIR] list, print or extract shipped programs

``FILE`` may also name a shipped program (``kahan_sum`` or
``corpus/kahan_sum.nir``).  Options are read from ``NSAN_OPTIONS`` first
(``key=value`` pairs separated by commas); command-line flags win.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass, field

from . import corpus
from .interp import run
from .ir import ParseError, VerifyError, parse_module, print_module, verify_module
from .runtime import (
    RuntimeFlags, SuppressionError, apply_options, load_suppressions, parse_options,
)
from .transform import MODULE_FLAG, InstrumentConfig, instrument_module

EXIT_TRAP = 2
EXIT_USAGE = 64
EXIT_DATAERR = 65

# NSAN_OPTIONS keys handled by the driver rather than RuntimeFlags
_PASS_OPTIONS = ("check_stores", "check_ret", "check_args", "check_fcmp")
_DRIVER_OPTIONS = ("suppressions", "error_exit_code") + _PASS_OPTIONS


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class CliConfig:
    command: str
    path: str | None = None
    output: str | None = None
    entry: str = "main"
    args: list[str] = field(default_factory=list)
    instrument: InstrumentConfig = field(default_factory=InstrumentConfig)
    flags: RuntimeFlags = field(default_factory=RuntimeFlags)
    suppressions: str | None = None
    error_exit_code: int = 0
    instrument_input: bool = True
    print_result: bool = False


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nsan", description="Numerical sanitizer for a small SSA IR.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_check_flags(sp):
        sp.add_argument("--check-loads", action="store_true", default=None,
                        help="compare loaded values against their stored shadows")
        for what in ("args", "fcmp", "stores", "ret"):
            sp.add_argument(f"--no-check-{what}", dest=f"check_{what}", action="store_false", default=None,
                            help=f"do not check {what}")

    r = sub.add_parser("run", help="instrument and execute a module")
    r.add_argument("path")
    r.add_argument("--entry", default="main", help="function to call (default: main)")
    r.add_argument("--arg", action="append", default=[], help="entry argument literal, repeatable")
    add_check_flags(r)
    r.add_argument("--rel-epsilon", type=float)
    r.add_argument("--abs-epsilon", type=float)
    r.add_argument("--comparison-strategy", choices=("epsilon", "relative-epsilon", "both"))
    r.add_argument("--halt-on-error", action="store_true", default=None)
    r.add_argument("--suppressions", metavar="PATH")
    r.add_argument("--error-exit-code", type=int)
    r.add_argument("--no-dedup", dest="dedup", action="store_false", default=None)
    r.add_argument("--max-warnings", type=int)
    r.add_argument("--seed", type=lambda s: int(s, 0))
    r.add_argument("--no-instrument", dest="instrument_input", action="store_false",
                   help="run the module as given")
    r.add_argument("--print-result", action="store_true", help="print the entry's return value on stdout")

    i = sub.add_parser("instrument", help="write the instrumented module")
    i.add_argument("path")
    i.add_argument("-o", "--output", help="output file (default: stdout)")
    add_check_flags(i)

    v = sub.add_parser("verify", help="parse and verify a module")
    v.add_argument("path")

    d = sub.add_parser("dump-corpus", help="list, print or extract the shipped programs")
    d.add_argument("name", nargs="?", help="program to print (or 'manifest')")
    d.add_argument("-o", "--output", metavar="DIR", help="write every program and the manifest to DIR")
    return p


def _env_options(environ) -> dict:
    text = environ.get("NSAN_OPTIONS", "")
    try:
        options = parse_options(text)
    except ValueError as exc:
        raise UsageError(f"NSAN_OPTIONS: {exc}") from None
    known = set(_DRIVER_OPTIONS) | set(RuntimeFlags.__dataclass_fields__) | {
        "rel_epsilon", "abs_epsilon"}
    unknown = sorted(set(options) - known)
    if unknown:
        raise UsageError(f"NSAN_OPTIONS: unknown option(s) {', '.join(unknown)}")
    return options


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


def make_config(argv: list[str], environ=None) -> CliConfig:
    environ = os.environ if environ is None else environ
    ns = build_parser().parse_args(argv)
    cfg = CliConfig(ns.command, getattr(ns, "path", None) or getattr(ns, "name", None),
                    getattr(ns, "output", None))
    if ns.command not in ("run", "instrument"):
        return cfg

    env = _env_options(environ) if ns.command == "run" else {}
    # runtime flags: env first, then command line
    try:
        flags = apply_options(RuntimeFlags(), env)
        cli = {
            "rel_epsilon": ns.rel_epsilon, "abs_epsilon": ns.abs_epsilon,
            "comparison_strategy": ns.comparison_strategy, "halt_on_error": ns.halt_on_error,
            "check_loads": ns.check_loads, "dedup": ns.dedup, "max_warnings": ns.max_warnings,
            "seed": ns.seed,
        } if ns.command == "run" else {"check_loads": ns.check_loads}
        flags = apply_options(flags, {k: v for k, v in cli.items() if v is not None})
        flags.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg.flags = flags

    checks = {k: _bool(env[k]) for k in _PASS_OPTIONS if k in env}
    for k in _PASS_OPTIONS:
        if getattr(ns, k) is not None:
            checks[k] = getattr(ns, k)
    cfg.instrument = dataclasses.replace(InstrumentConfig(), check_loads=flags.check_loads, **checks)

    if ns.command == "run":
        cfg.entry, cfg.args = ns.entry, ns.arg
        cfg.suppressions = ns.suppressions if ns.suppressions is not None else env.get("suppressions")
        code = ns.error_exit_code if ns.error_exit_code is not None else env.get("error_exit_code", 0)
        try:
            cfg.error_exit_code = int(code)
        except ValueError:
            raise UsageError(f"error_exit_code must be an integer, got {code!r}") from None
        cfg.instrument_input = ns.instrument_input
        cfg.print_result = ns.print_result
    return cfg


def read_module_text(path: str) -> str:
    if os.path.exists(path):
        with open(path, encoding="utf-8") as f:
            return f.read()
    name = os.path.basename(path)
    name = name[:-4] if name.endswith(".nir") else name
    if name in corpus.programs():
        return corpus.source(name)
    raise InputError(f"{path}: no such file")


def load_module(path: str):
    try:
        m = parse_module(read_module_text(path))
    except ParseError as exc:
        raise InputError(f"{path}:{exc}") from None
    problems = verify_module(m)
    if problems:
        raise InputError("\n".join(f"{path}: {d}" for d in problems))
    return m


def summary_line(result) -> str:
    n = len(result.warnings)
    counts = result.counts_by_kind()
    kinds = ", ".join(f"{k}: {counts[k]}" for k in sorted(counts))
    head = f"{n} warning{'' if n == 1 else 's'}" + (f" [{kinds}]" if kinds else "")
    return f"nsan: {head}, {len(result.suppressed)} suppressed, {len(result.resumed)} resumed\n"


def cmd_run(cfg: CliConfig, out, err) -> int:
    m = load_module(cfg.path)
    if cfg.instrument_input and MODULE_FLAG not in m.flags:
        m = instrument_module(m, cfg.instrument)
    sups = []
    if cfg.suppressions:
        try:
            sups = load_suppressions(cfg.suppressions)
        except OSError as exc:
            raise InputError(f"{cfg.suppressions}: {exc.strerror}") from None
        except SuppressionError as exc:
            raise InputError(f"{cfg.suppressions}: {exc}") from None
    fn = m.get(cfg.entry)
    if fn is None or fn.is_declaration:
        raise UsageError(f"no function @{cfg.entry} to run")
    if len(cfg.args) != len(fn.params):
        raise UsageError(f"@{cfg.entry} takes {len(fn.params)} argument(s), got {len(cfg.args)}")
    try:
        result = run(m, cfg.entry, cfg.args, cfg.flags, sups, stderr=err.write, verify=False)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out.write(result.stdout)
    if cfg.print_result and result.ok and result.value is not None:
        out.write(f"{result.value!r}\n")
    if result.trap is not None:
        err.write(result.trap.format())
    err.write(summary_line(result))
    if result.trap is not None:
        return EXIT_TRAP
    if result.halted:
        return cfg.error_exit_code or 1
    if result.warnings and cfg.error_exit_code:
        return cfg.error_exit_code
    return 0


def cmd_instrument(cfg: CliConfig, out, err) -> int:
    m = instrument_module(load_module(cfg.path), cfg.instrument)
    text = print_module(m)
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        out.write(text)
    return 0


def cmd_verify(cfg: CliConfig, out, err) -> int:
    load_module(cfg.path)
    out.write(f"{cfg.path}: ok\n")
    return 0


def cmd_dump_corpus(cfg: CliConfig, out, err) -> int:
    names = corpus.programs()
    if cfg.output:
        os.makedirs(cfg.output, exist_ok=True)
        for name in names:
            with open(os.path.join(cfg.output, f"{name}.nir"), "w", encoding="utf-8") as f:
                f.write(corpus.source(name))
        with open(os.path.join(cfg.output, "manifest.txt"), "w", encoding="utf-8") as f:
            f.write(corpus.manifest_text())
        out.write(f"wrote {len(names)} programs to {cfg.output}\n")
    elif cfg.path == "manifest":
        out.write(corpus.manifest_text())
    elif cfg.path:
        name = cfg.path[:-4] if cfg.path.endswith(".nir") else cfg.path
        if name not in names:
            raise UsageError(f"no corpus program {cfg.path!r}")
        out.write(corpus.source(name))
    else:
        out.write("".join(f"{n}\n" for n in names))
    return 0


COMMANDS = {
    "run": cmd_run, "instrument": cmd_instrument,
    "verify": cmd_verify, "dump-corpus": cmd_dump_corpus,
}


def main(argv: list[str] | None = None, environ=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = make_config(argv, environ)
        return COMMANDS[cfg.command](cfg, out, err)
    except UsageError as exc:
        err.write(f"nsan: {exc}\n")
        return EXIT_USAGE
    except (InputError, VerifyError) as exc:
        err.write(f"{exc}\n")
        return EXIT_DATAERR


if __name__ == "__main__":
    sys.exit(main())
