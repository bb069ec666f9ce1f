"""Recursive-descent parser for ``.nir`` text.

The grammar is whitespace-insensitive: a whole function may sit on one line.
See ``docs/ir.md`` for the full grammar.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction

from .. import fp
from ..extended import Quad
from .core import (
    BINARY_FP, BINARY_INT, CASTS, FCMP_PREDS, ICMP_PREDS, INT_BITS, Block, Const,
    FuncRef, Function, Instruction, IrType, Local, Module, SourceLoc, VOID,
    normalize_int,
)


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|;[^\n]*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<local>%[A-Za-z0-9_.$-]+)
  | (?P<global>@[A-Za-z0-9_.$]+)
  | (?P<number>[-+]?0x(?:p(?=[0-9a-fA-F.]))?[0-9a-fA-F.]*(?:p[-+]?\d+)?
              |[-+]?(?:inf|nan)\b
              |[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_$.][A-Za-z0-9_.$-]*)
  | (?P<punct>[=,(){}\[\]<>:!])
    """,
    re.VERBOSE,
)


class Token:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind: str, text: str, line: int, col: int):
        self.kind = kind
        self.text = text
        self.line = line
        self.col = col

    def __repr__(self) -> str:
        return f"Token({self.kind}, {self.text!r}, {self.line}:{self.col})"


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        nl = m.group().count("\n")
        if nl:
            line += nl
            line_start = m.start() + m.group().rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


def _unquote(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s[1:-1])


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.module = Module()

    # -- token helpers ------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col)

    def next(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def accept(self, text: str) -> bool:
        if self.tok.text == text and self.tok.kind in ("punct", "ident"):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not (self.tok.text == text and self.tok.kind in ("punct", "ident")):
            raise self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        return self.next()

    def expect_kind(self, kind: str, what: str) -> Token:
        if self.tok.kind != kind:
            raise self.error(f"expected {what}, found {self.tok.text or 'end of input'!r}")
        return self.next()

    # -- module level -------------------------------------------------------

    def parse(self) -> Module:
        names: set[str] = set()
        while self.tok.kind != "eof":
            t = self.tok
            if self.accept("source_filename"):
                self.expect("=")
                self.module.source_filename = _unquote(self.expect_kind("string", "a string").text)
            elif self.accept("module_flag"):
                flag = _unquote(self.expect_kind("string", "a string").text)
                self.module.flags = self.module.flags | {flag}
            elif t.text in ("define", "declare"):
                fn = self.parse_function()
                if fn.name in names:
                    raise self.error(f"duplicate function name @{fn.name}", t)
                names.add(fn.name)
                self.module.functions.append(fn)
            else:
                raise self.error(f"unexpected {t.text!r} at top level")
        return self.module

    def parse_type(self, allow_void: bool = False) -> IrType:
        t = self.tok
        if self.accept("<"):
            lanes_tok = self.expect_kind("number", "a lane count")
            self.expect("x")
            scalar = self.expect_kind("ident", "a scalar type").text
            self.expect(">")
            try:
                return IrType(scalar, int(lanes_tok.text))
            except ValueError as exc:
                raise self.error(str(exc), t) from None
        name = self.expect_kind("ident", "a type").text
        if name == "void":
            if not allow_void:
                raise self.error("void is not a value type", t)
            return VOID
        try:
            return IrType(name)
        except ValueError as exc:
            raise self.error(str(exc), t) from None

    def parse_attrs(self) -> set[str]:
        attrs = set()
        while self.tok.kind == "ident" and self.tok.text in ("noinstrument", "external"):
            attrs.add(self.next().text)
        return attrs

    def parse_function(self) -> Function:
        is_decl = self.next().text == "declare"
        ret = self.parse_type(allow_void=True)
        name = self.expect_kind("global", "a function name").text[1:]
        self.expect("(")
        params: list[tuple[str, IrType]] = []
        self.locals: dict[str, Token] = {}
        if not self.accept(")"):
            while True:
                ty = self.parse_type()
                if is_decl:
                    pname = f"arg{len(params)}"
                    if self.tok.kind == "local":
                        self.next()
                else:
                    pt = self.expect_kind("local", "a parameter name")
                    pname = pt.text[1:]
                    self.define_local(pname, pt)
                params.append((pname, ty))
                if self.accept(")"):
                    break
                self.expect(",")
        attrs = self.parse_attrs()
        fn = Function(name, params, ret, [], frozenset(attrs | ({"external"} if is_decl else set())))
        if is_decl:
            return fn
        self.expect("{")
        labels: set[str] = set()
        while not self.accept("}"):
            lt = self.tok
            if lt.kind != "ident" or self.peek().text != ":":
                raise self.error("expected a block label")
            self.next()
            self.next()
            if lt.text in labels:
                raise self.error(f"duplicate block label {lt.text}", lt)
            labels.add(lt.text)
            block = Block(lt.text)
            fn.blocks.append(block)
            while not (self.tok.text == "}" or (self.tok.kind == "ident" and self.peek().text == ":")):
                if self.tok.kind == "eof":
                    raise self.error("unterminated function body")
                block.instructions.append(self.parse_instruction())
        return fn

    def define_local(self, name: str, tok: Token) -> None:
        if name in self.locals:
            raise self.error(f"duplicate SSA name %{name}", tok)
        self.locals[name] = tok

    # -- values -------------------------------------------------------------

    def parse_value(self, ty: IrType):
        t = self.tok
        if t.kind == "local":
            self.next()
            return Local(t.text[1:], ty)
        if t.kind == "global":
            self.next()
            if not ty.is_ptr:
                raise self.error("function references have type ptr", t)
            return FuncRef(t.text[1:])
        if ty.is_vector:
            self.expect("<")
            lanes = []
            while True:
                el = self.parse_type()
                if el != ty.element:
                    raise self.error(f"vector element type {el} does not match {ty}")
                lanes.append(self.parse_lane(el))
                if self.accept(">"):
                    break
                self.expect(",")
            if len(lanes) != ty.lanes:
                raise self.error(f"expected {ty.lanes} lanes, found {len(lanes)}", t)
            return Const(ty, tuple(lanes))
        return Const(ty, self.parse_lane(ty))

    def parse_lane(self, ty: IrType) -> int:
        t = self.next()
        text = t.text
        if ty.is_float:
            if t.kind != "number":
                raise self.error(f"expected a {ty} literal", t)
            try:
                return parse_float_literal(text, ty.scalar)
            except ValueError as exc:
                raise self.error(str(exc), t) from None
        if ty.is_ptr:
            if text == "null":
                return 0
        elif ty.scalar == "i1" and text in ("true", "false"):
            return int(text == "true")
        if t.kind != "number" or not re.fullmatch(r"[-+]?\d+", text):
            raise self.error(f"expected an integer literal for {ty}", t)
        v = int(text)
        if ty.is_ptr:
            if v < 0 or v >= 1 << 64:
                raise self.error("pointer literal out of range", t)
            return v
        bits = INT_BITS[ty.scalar]
        if not -(1 << (bits - 1)) <= v < (1 << bits) and bits > 1:
            raise self.error(f"integer literal out of range for {ty}", t)
        return normalize_int(ty.scalar, v)

    def typed_value(self):
        ty = self.parse_type()
        return self.parse_value(ty)

    def parse_label_ref(self) -> str:
        self.expect("label")
        return self.expect_kind("local", "a block label").text[1:]

    def parse_loc(self) -> SourceLoc | None:
        if not self.accept("!"):
            return None
        self.expect("loc")
        file = self.module.source_filename
        if self.tok.kind == "string":
            file = _unquote(self.next().text)
            self.expect(":")
        if file is None:
            raise self.error("location without a file and no source_filename")
        line_tok = self.expect_kind("number", "a line number")
        # "12:5" lexes as number ':' number
        col = 0
        if self.accept(":"):
            col = int(self.expect_kind("number", "a column number").text)
        try:
            return SourceLoc(file, int(line_tok.text), col)
        except ValueError as exc:
            raise self.error(str(exc), line_tok) from None

    # -- instructions -------------------------------------------------------

    def parse_instruction(self) -> Instruction:
        start = self.tok
        result = None
        if self.tok.kind == "local" and self.peek().text == "=":
            result = self.next().text[1:]
            self.next()
            self.define_local(result, start)
        op_tok = self.expect_kind("ident", "an opcode")
        op = op_tok.text
        inst = Instruction(op, result=result)
        if op in BINARY_FP or op in BINARY_INT:
            inst.type = self.parse_type()
            a = self.parse_value(inst.type)
            self.expect(",")
            inst.operands = [a, self.parse_value(inst.type)]
        elif op == "fneg":
            v = self.typed_value()
            inst.type, inst.operands = v.type, [v]
        elif op in ("fcmp", "icmp"):
            preds = FCMP_PREDS if op == "fcmp" else ICMP_PREDS
            pred = self.expect_kind("ident", "a predicate")
            if pred.text not in preds:
                raise self.error(f"unknown {op} predicate {pred.text!r}", pred)
            inst.pred = pred.text
            ty = self.parse_type()
            a = self.parse_value(ty)
            self.expect(",")
            inst.operands = [a, self.parse_value(ty)]
            inst.type = IrType("i1")
        elif op in CASTS:
            inst.operands = [self.typed_value()]
            self.expect("to")
            inst.type = self.parse_type()
        elif op in ("select", "extractelement", "insertelement", "shufflevector", "ptradd"):
            inst.operands = self.operand_list()
            if op == "select" and len(inst.operands) == 3:
                inst.type = inst.operands[1].type
            elif op == "extractelement" and inst.operands:
                inst.type = inst.operands[0].type.element
            elif op == "insertelement" and inst.operands:
                inst.type = inst.operands[0].type
            elif op == "shufflevector" and len(inst.operands) == 3:
                a, mask = inst.operands[0], inst.operands[2]
                inst.type = a.type.element.with_lanes(mask.type.lanes)
            elif op == "ptradd":
                inst.type = IrType("ptr")
        elif op in ("store", "memcpy", "memset"):
            inst.operands = self.operand_list()
        elif op == "load":
            inst.type = self.parse_type()
            self.expect(",")
            inst.operands = [self.typed_value()]
        elif op == "alloca":
            inst.alloc_type = self.parse_type()
            inst.type = IrType("ptr")
            if self.accept(","):
                inst.operands = [self.typed_value()]
        elif op == "call":
            inst.type = self.parse_type(allow_void=True)
            callee_tok = self.tok
            if callee_tok.kind == "global":
                callee = FuncRef(self.next().text[1:])
            elif callee_tok.kind == "local":
                callee = Local(self.next().text[1:], IrType("ptr"))
            else:
                raise self.error("expected a callee")
            self.expect("(")
            args = []
            if not self.accept(")"):
                while True:
                    args.append(self.typed_value())
                    if self.accept(")"):
                        break
                    self.expect(",")
            inst.operands = [callee] + args
        elif op == "phi":
            inst.type = self.parse_type()
            while True:
                self.expect("[")
                v = self.parse_value(inst.type)
                self.expect(",")
                lbl = self.expect_kind("local", "a block label").text[1:]
                self.expect("]")
                inst.operands.append(v)
                inst.targets.append(lbl)
                if not self.accept(","):
                    break
        elif op == "br":
            inst.targets = [self.parse_label_ref()]
        elif op == "condbr":
            inst.operands = [self.typed_value()]
            self.expect(",")
            t = self.parse_label_ref()
            self.expect(",")
            inst.targets = [t, self.parse_label_ref()]
        elif op == "ret":
            if not self.accept("void"):
                inst.operands = [self.typed_value()]
        elif op == "unreachable":
            pass
        else:
            raise self.error(f"unknown opcode {op!r}", op_tok)
        if result is not None and (inst.type is None or inst.type.is_void):
            raise self.error(f"{op} does not produce a value", start)
        if result is None and op in BINARY_FP + BINARY_INT + CASTS + (
                "fneg", "fcmp", "icmp", "select", "extractelement", "insertelement",
                "shufflevector", "ptradd", "load", "alloca", "phi"):
            raise self.error(f"result of {op} must be named", start)
        inst.loc = self.parse_loc()
        return inst

    def operand_list(self) -> list:
        ops = [self.typed_value()]
        while self.accept(","):
            ops.append(self.typed_value())
        return ops


def parse_float_literal(text: str, scalar: str) -> int:
    """Bit pattern of a float literal rounded into ``scalar``."""
    fmt = fp.FORMATS[scalar]
    low = text.lower()
    neg = low.startswith("-")
    body = low.lstrip("+-")
    if body == "inf":
        x = -math.inf if neg else math.inf
        return _bits(scalar, Quad.from_float(x) if scalar == "f128" else x)
    if body == "nan":
        return _bits(scalar, Quad.from_float(math.nan) if scalar == "f128" else math.nan)
    if body.startswith("0x") and "p" not in body[2:]:
        bits = int(body[2:], 16)
        if neg or bits >> (fmt.width * 8):
            raise ValueError(f"raw bit pattern {text!r} does not fit {scalar}")
        return bits
    if body.startswith("0x"):
        neg, n, e = fp.parse_hex(low)
        if scalar == "f128":
            return Quad._round(neg, n, e).to_bits()
        return _bits(scalar, fp.dyadic_to_float(neg, n, e, fmt))
    q = Fraction(body)
    if scalar == "f128":
        v = Quad.from_fraction(-q if neg else q)
        if q == 0 and neg:
            v = -v
        return v.to_bits()
    return _bits(scalar, fp.fraction_to_float(neg, q.numerator, q.denominator, fmt))


def _bits(scalar: str, x) -> int:
    if scalar == "f32":
        return fp.f32_to_bits(x)
    if scalar == "f64":
        return fp.f64_to_bits(x)
    return x.to_bits()


def parse_module(text: str) -> Module:
    return _Parser(text).parse()
