"""Syntax tree for map-reduce programs.

Nodes are frozen dataclasses; source positions are carried for diagnostics but
excluded from equality so that a pretty-printed and re-parsed program compares
equal to the original.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from ..fixpoint import FixedFormat

ELEM_OPS = ("add", "sub", "mul", "max", "min", "select", "relu", "leaky_relu", "lut_lookup")
CALL_ARITY = {"max": 2, "min": 2, "select": 3, "relu": 1, "leaky_relu": 1}


@dataclass(frozen=True)
class Pos:
    line: int = 0
    col: int = 0

    def __str__(self):
        return f"{self.line}:{self.col}"


NOPOS = Pos()


def _pos():
    return field(default=NOPOS, compare=False, repr=False)


@dataclass(frozen=True)
class Num:
    value: float
    pos: Pos = _pos()


@dataclass(frozen=True)
class Var:
    name: str
    pos: Pos = _pos()


@dataclass(frozen=True)
class Index:
    name: str
    indices: tuple["Expr", ...]
    pos: Pos = _pos()


@dataclass(frozen=True)
class BinOp:
    op: str  # add | sub | mul
    lhs: "Expr"
    rhs: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Call:
    fn: str  # relu | leaky_relu | max | min | select | <lut name>
    args: tuple["Expr", ...]
    pos: Pos = _pos()


@dataclass(frozen=True)
class TripCount:
    count: int
    par: Optional[int] = None
    # sizeof(...) spelling kept for printing only
    text: str = field(default="", compare=False)


@dataclass(frozen=True)
class Block:
    bindings: tuple[tuple[str, "Expr"], ...]
    result: "Expr"


@dataclass(frozen=True)
class MapExpr:
    trip: TripCount
    var: str
    body: Block
    pos: Pos = _pos()


@dataclass(frozen=True)
class ReduceExpr:
    vec: "Expr"
    op: str  # add | mul | max | min
    x: str = "x"
    y: str = "y"
    pos: Pos = _pos()


Expr = Union[Num, Var, Index, BinOp, Call, MapExpr, ReduceExpr]


@dataclass(frozen=True)
class TensorDecl:
    name: str
    shape: tuple[int, ...]
    format: FixedFormat
    pos: Pos = _pos()

    @property
    def size(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n


@dataclass(frozen=True)
class WeightDecl(TensorDecl):
    source: str = ""


@dataclass(frozen=True)
class LutDecl:
    name: str
    fn: str
    lo: float
    hi: float
    pos: Pos = _pos()


@dataclass(frozen=True)
class Assign:
    name: str
    expr: Expr
    pos: Pos = _pos()


@dataclass(frozen=True)
class Program:
    name: str
    inputs: tuple[TensorDecl, ...]
    outputs: tuple[TensorDecl, ...]
    weights: tuple[WeightDecl, ...]
    luts: tuple[LutDecl, ...]
    body: tuple[Assign, ...]
    path: str = field(default="<string>", compare=False)

    def decl(self, name: str):
        for d in (*self.inputs, *self.outputs, *self.weights):
            if d.name == name:
                return d
        return None

    @property
    def format(self) -> FixedFormat:
        decls = (*self.inputs, *self.outputs, *self.weights)
        return decls[0].format if decls else FixedFormat()


def children(e: Expr) -> tuple:
    if isinstance(e, Index):
        return e.indices
    if isinstance(e, BinOp):
        return (e.lhs, e.rhs)
    if isinstance(e, Call):
        return e.args
    if isinstance(e, MapExpr):
        return (*(b for _, b in e.body.bindings), e.body.result)
    if isinstance(e, ReduceExpr):
        return (e.vec,)
    return ()


def pattern_depth(e: Expr) -> int:
    """Nesting depth of Map/Reduce patterns, counting a leaf ElemOp as one level."""
    inner = max((pattern_depth(c) for c in children(e)), default=0)
    if isinstance(e, (MapExpr, ReduceExpr)):
        return inner + 1
    if isinstance(e, (BinOp, Call)):
        return max(inner, 1)
    return inner
