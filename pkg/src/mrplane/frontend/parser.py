"""Recursive-descent parser for the ``.mr`` map-reduce language.

A program looks like::

    Control layer(in metadata features: fix8[6], out metadata scores: fix8[2]) {
      weight W: fix8[2, 6] = loadModelFromFile("layer.csv")
      scores = Map(sizeof(W[0])) { i =>
        prods = Map(sizeof(W[1])) { j => W[i, j] * features[j] }
        relu(Reduce(prods) { (x, y) => x + y })
      }
    }
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..fixpoint import LUT_DOMAINS, LUT_FUNCTIONS, FixedFormat, FixedPointError
from .ast import (
    CALL_ARITY, Assign, BinOp, Block, Call, Index, LutDecl, MapExpr, Num, Pos,
    Program, ReduceExpr, TensorDecl, TripCount, Var, WeightDecl,
)


class FrontendError(Exception):
    def __init__(self, message: str, pos: Pos | None = None, path: str = "<string>"):
        super().__init__(message)
        self.message = message
        self.pos = pos or Pos()
        self.path = path

    def __str__(self):
        return f"{self.path}:{self.pos.line}:{self.pos.col}: {self.message}"


class ParseError(FrontendError):
    pass


@dataclass
class Token:
    kind: str  # ident | num | str | op | eof
    text: str
    pos: Pos


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>(//|\#)[^\n]*)
  | (?P<num>\d+(\.\d+)?([eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<str>"[^"\n]*")
  | (?P<op>=>|[-+*()\[\]{},:;=.])
""", re.VERBOSE)

KEYWORDS = {"Control", "Map", "Reduce", "weight", "lut", "sizeof", "par", "in", "out",
            "metadata", "loadModelFromFile"}


def tokenize(text: str, path: str = "<string>") -> list[Token]:
    tokens = []
    line, col, i = 1, 1, 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if not m:
            raise ParseError(f"unexpected character {text[i]!r}", Pos(line, col), path)
        kind = m.lastgroup
        s = m.group()
        if kind == "nl":
            line, col = line + 1, 1
        else:
            if kind not in ("ws", "comment"):
                tokens.append(Token(kind, s, Pos(line, col)))
            col += len(s)
        i = m.end()
    tokens.append(Token("eof", "", Pos(line, col)))
    return tokens


class _Parser:
    def __init__(self, text: str, path: str):
        self.toks = tokenize(text, path)
        self.i = 0
        self.path = path
        self.globals: dict[str, str] = {}  # name -> input|output|weight|lut|value
        self.shapes: dict[str, tuple[int, ...]] = {}
        self.luts: dict[str, LutDecl] = {}

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: Token | None = None) -> ParseError:
        return ParseError(msg, (tok or self.tok).pos, self.path)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "ident") and self.tok.text == text

    def eat(self, text: str) -> Token:
        if not self.at(text):
            shown = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {shown!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> Token:
        if self.tok.kind != "ident":
            raise self.error(f"expected identifier, found {self.tok.text or 'end of input'!r}")
        t = self.tok
        self.i += 1
        return t

    def integer(self) -> int:
        t = self.tok
        if t.kind != "num" or not t.text.isdigit():
            raise self.error(f"expected integer, found {t.text!r}")
        self.i += 1
        return int(t.text)

    def number(self) -> float:
        neg = False
        if self.at("-"):
            self.i += 1
            neg = True
        t = self.tok
        if t.kind != "num":
            raise self.error(f"expected number, found {t.text!r}")
        self.i += 1
        return -float(t.text) if neg else float(t.text)

    def skip_semis(self):
        while self.at(";"):
            self.i += 1

    def declare(self, name: str, kind: str, tok: Token):
        if name in self.globals or name in KEYWORDS:
            raise self.error(f"duplicate identifier {name!r}", tok)
        self.globals[name] = kind

    # -- declarations
    def fmt(self) -> FixedFormat:
        t = self.ident()
        text = t.text
        if self.at("."):
            self.i += 1
            text += "." + str(self.integer())
        try:
            return FixedFormat.parse(text)
        except (FixedPointError, ValueError) as exc:
            raise self.error(str(exc), t) from None

    def shape(self) -> tuple[int, ...]:
        self.eat("[")
        dims = [self.integer()]
        while self.at(","):
            self.i += 1
            dims.append(self.integer())
        self.eat("]")
        return tuple(dims)

    def program(self) -> Program:
        self.eat("Control")
        name = self.ident().text
        self.eat("(")
        inputs, outputs = [], []
        while not self.at(")"):
            t = self.tok
            if t.text not in ("in", "out"):
                raise self.error("expected 'in' or 'out' parameter")
            self.i += 1
            if self.at("metadata"):
                self.i += 1
            pname = self.ident()
            self.eat(":")
            f = self.fmt()
            shp = self.shape()
            decl = TensorDecl(pname.text, shp, f, pname.pos)
            self.declare(pname.text, "input" if t.text == "in" else "output", pname)
            self.shapes[pname.text] = shp
            (inputs if t.text == "in" else outputs).append(decl)
            if not self.at(")"):
                self.eat(",")
        self.eat(")")
        self.eat("{")
        weights, luts, body = [], [], []
        self.skip_semis()
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise self.error("unexpected end of input, expected '}'")
            if self.at("weight"):
                weights.append(self.weight_decl())
            elif self.at("lut"):
                luts.append(self.lut_decl())
            else:
                body.append(self.assign())
            self.skip_semis()
        self.eat("}")
        if self.tok.kind != "eof":
            raise self.error(f"trailing input {self.tok.text!r}")
        return Program(name, tuple(inputs), tuple(outputs), tuple(weights), tuple(luts),
                       tuple(body), self.path)

    def weight_decl(self) -> WeightDecl:
        self.eat("weight")
        t = self.ident()
        self.eat(":")
        f = self.fmt()
        shp = self.shape()
        self.eat("=")
        self.eat("loadModelFromFile")
        self.eat("(")
        src = self.tok
        if src.kind == "str":
            source = src.text[1:-1]
            self.i += 1
        else:
            # bare file names such as Model.csv
            parts = [self.ident().text]
            while self.at("."):
                self.i += 1
                parts.append(self.ident().text)
            source = ".".join(parts)
        self.eat(")")
        self.declare(t.text, "weight", t)
        self.shapes[t.text] = shp
        return WeightDecl(t.text, shp, f, t.pos, source=source)

    def lut_decl(self) -> LutDecl:
        self.eat("lut")
        t = self.ident()
        self.eat("=")
        fn = self.ident()
        if fn.text not in LUT_FUNCTIONS:
            raise self.error(f"unknown operator {fn.text!r}", fn)
        lo, hi = LUT_DOMAINS[fn.text]
        if self.at("("):
            self.i += 1
            lo = self.number()
            self.eat(",")
            hi = self.number()
            self.eat(")")
        self.declare(t.text, "lut", t)
        decl = LutDecl(t.text, fn.text, lo, hi, t.pos)
        self.luts[t.text] = decl
        return decl

    def assign(self) -> Assign:
        t = self.ident()
        self.eat("=")
        if self.globals.get(t.text) == "output":
            self.globals[t.text] = "assigned"
        elif t.text in self.globals or t.text in KEYWORDS:
            raise self.error(f"duplicate identifier {t.text!r}", t)
        expr = self.expr(scope={})
        if t.text not in self.globals:
            self.globals[t.text] = "value"
        if isinstance(expr, MapExpr):
            self.shapes[t.text] = (expr.trip.count,)
        return Assign(t.text, expr, t.pos)

    # -- expressions; scope maps local names to 'loop' | 'local'
    def expr(self, scope):
        e = self.term(scope)
        while self.at("+") or self.at("-"):
            t = self.tok
            self.i += 1
            rhs = self.term(scope)
            e = BinOp("add" if t.text == "+" else "sub", e, rhs, t.pos)
        return e

    def term(self, scope):
        e = self.unary(scope)
        while self.at("*"):
            t = self.tok
            self.i += 1
            e = BinOp("mul", e, self.unary(scope), t.pos)
        return e

    def unary(self, scope):
        if self.at("-"):
            t = self.tok
            self.i += 1
            if self.tok.kind == "num":
                n = self.tok
                self.i += 1
                return Num(-float(n.text), t.pos)
            return BinOp("sub", Num(0.0, t.pos), self.unary(scope), t.pos)
        return self.primary(scope)

    def lookup(self, tok: Token, scope):
        name = tok.text
        if name in scope:
            return scope[name]
        kind = self.globals.get(name)
        if kind in (None, "output", "lut"):
            raise self.error(f"unknown identifier {name!r}", tok)
        # an output may be read once it has been assigned
        return "value" if kind == "assigned" else kind

    def primary(self, scope):
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Num(float(t.text), t.pos)
        if self.at("("):
            self.i += 1
            e = self.expr(scope)
            self.eat(")")
            return e
        if self.at("Map"):
            return self.map_expr(scope)
        if self.at("Reduce"):
            return self.reduce_expr(scope)
        if t.kind != "ident":
            raise self.error(f"unexpected {t.text or 'end of input'!r}")
        self.i += 1
        if self.at("("):
            return self.call(t, scope)
        self.lookup(t, scope)
        if self.at("["):
            self.i += 1
            idx = [self.expr(scope)]
            while self.at(","):
                self.i += 1
                idx.append(self.expr(scope))
            self.eat("]")
            return Index(t.text, tuple(idx), t.pos)
        return Var(t.text, t.pos)

    def call(self, t: Token, scope):
        fn = t.text
        if fn not in CALL_ARITY and fn not in self.luts and fn not in LUT_FUNCTIONS:
            raise self.error(f"unknown operator {fn!r}", t)
        self.eat("(")
        args = []
        while not self.at(")"):
            args.append(self.expr(scope))
            if not self.at(")"):
                self.eat(",")
        self.eat(")")
        want = CALL_ARITY.get(fn, 1)
        if len(args) != want:
            raise self.error(f"{fn} takes {want} argument(s), got {len(args)}", t)
        return Call(fn, tuple(args), t.pos)

    def trip(self, scope) -> TripCount:
        t = self.tok
        if t.kind == "num":
            count, text = self.integer(), ""
        elif self.at("sizeof"):
            self.i += 1
            self.eat("(")
            nt = self.ident()
            if nt.text not in self.shapes or (nt.text not in scope and self.globals.get(nt.text) is None):
                raise self.error(f"non-constant trip count: sizeof({nt.text})", nt)
            dim = 0
            text = f"sizeof({nt.text})"
            if self.at("["):
                self.i += 1
                dim = self.integer()
                self.eat("]")
                text = f"sizeof({nt.text}[{dim}])"
            self.eat(")")
            shp = self.shapes[nt.text]
            if dim >= len(shp):
                raise self.error(f"{nt.text} has no dimension {dim}", nt)
            count = shp[dim]
        else:
            raise self.error(f"non-constant trip count {t.text!r}")
        par = None
        if self.at("par"):
            self.i += 1
            par = self.integer()
            if par < 1:
                raise self.error("par factor must be positive")
        return TripCount(count, par, text)

    def map_expr(self, scope):
        t = self.eat("Map")
        self.eat("(")
        trip = self.trip(scope)
        self.eat(")")
        self.eat("{")
        var = self.ident()
        self.eat("=>")
        inner = dict(scope)
        inner[var.text] = "loop"
        body = self.block(inner)
        self.eat("}")
        return MapExpr(trip, var.text, body, t.pos)

    def block(self, scope) -> Block:
        bindings = []
        self.skip_semis()
        while self.tok.kind == "ident" and self.peek().text == "=" and self.peek().kind == "op":
            nt = self.ident()
            self.eat("=")
            if nt.text in scope or nt.text in self.globals:
                raise self.error(f"duplicate identifier {nt.text!r}", nt)
            e = self.expr(scope)
            scope = dict(scope)
            scope[nt.text] = "local"
            if isinstance(e, MapExpr):
                self.shapes[nt.text] = (e.trip.count,)
            bindings.append((nt.text, e))
            self.skip_semis()
        result = self.expr(scope)
        self.skip_semis()
        return Block(tuple(bindings), result)

    def reduce_expr(self, scope):
        t = self.eat("Reduce")
        self.eat("(")
        vec = self.expr(scope)
        self.eat(")")
        self.eat("{")
        self.eat("(")
        x = self.ident().text
        self.eat(",")
        y = self.ident().text
        self.eat(")")
        self.eat("=>")
        op = self.combine(x, y)
        self.eat("}")
        return ReduceExpr(vec, op, x, y, t.pos)

    def combine(self, x: str, y: str) -> str:
        start = self.tok
        if self.tok.text in ("max", "min") and self.peek().text == "(":
            fn = self.ident().text
            self.eat("(")
            a = self.ident().text
            self.eat(",")
            b = self.ident().text
            self.eat(")")
            if {a, b} != {x, y}:
                raise self.error("combine must use both reduction operands", start)
            return fn
        a = self.ident().text
        opt = self.tok
        if opt.text not in ("+", "*", "-"):
            raise self.error(f"unsupported combine operator {opt.text!r}", opt)
        self.i += 1
        b = self.ident().text
        if {a, b} != {x, y} or a == b:
            raise self.error("combine must use both reduction operands", start)
        return {"+": "add", "*": "mul", "-": "sub"}[opt.text]


def parse_program(text: str, path: str = "<string>") -> Program:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return _Parser(text, path).program()


def parse_file(path) -> Program:
    with open(path, encoding="utf-8") as fh:
        return parse_program(fh.read(), str(path))
