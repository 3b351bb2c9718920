"""Shape checking and pattern annotation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from ..fixpoint import COMBINE_OPS
from .ast import (
    BinOp, Call, Index, MapExpr, Num, Pos, Program, ReduceExpr, Var, pattern_depth,
)
from .parser import FrontendError

MAX_DEPTH = 4
DEFAULT_MU_CAPACITY = 4096


class ValidationError(FrontendError):
    pass


@dataclass(frozen=True)
class TypedProgram:
    program: Program
    shapes: tuple[tuple[str, tuple[int, ...]], ...]
    # (statement name, child path) of every Reduce whose input is produced by a Map
    fused: frozenset = field(default_factory=frozenset)

    def shape(self, name: str) -> tuple[int, ...]:
        return dict(self.shapes)[name]

    @property
    def name(self) -> str:
        return self.program.name


class _Checker:
    def __init__(self, p: Program, mu_capacity: int):
        self.p = p
        self.mu_capacity = mu_capacity
        self.values: dict[str, tuple[int, ...]] = {}
        self.tensors = {d.name: d for d in (*p.inputs, *p.weights)}
        self.fused: set = set()
        self.stmt = ""

    def fail(self, msg: str, pos: Pos | None) -> ValidationError:
        return ValidationError(msg, pos, self.p.path)

    def check_decls(self):
        p = self.p
        decls = (*p.inputs, *p.outputs, *p.weights)
        for d in decls:
            if not d.shape or any(n < 1 for n in d.shape):
                raise self.fail(f"empty extent in declaration of {d.name!r}", d.pos)
            if d.format != decls[0].format:
                raise self.fail(f"format mismatch: {d.name} is {d.format}, program uses {decls[0].format}", d.pos)
        for d in (*p.inputs, *p.outputs):
            if len(d.shape) != 1:
                raise self.fail(f"{d.name!r} must be a vector", d.pos)
        for w in p.weights:
            if w.size > self.mu_capacity:
                raise self.fail(f"weight {w.name!r} has {w.size} words, MU capacity is {self.mu_capacity}", w.pos)
        for lt in p.luts:
            if not lt.lo < lt.hi:
                raise self.fail(f"lut {lt.name!r} needs lo < hi", lt.pos)

    def run(self) -> TypedProgram:
        self.check_decls()
        outputs = {d.name: d for d in self.p.outputs}
        assigned = set()
        shapes = []
        for a in self.p.body:
            self.stmt = a.name
            if pattern_depth(a.expr) > MAX_DEPTH:
                raise self.fail(f"pattern nesting deeper than {MAX_DEPTH}", a.pos)
            shp = self.shape(a.expr, {}, {}, ())
            if a.name in outputs:
                want = outputs[a.name].shape
                if shp != want and not (shp == () and want == (1,)):
                    raise self.fail(f"shape mismatch: output {a.name!r} declared {list(want)}, got {list(shp) or 'scalar'}", a.pos)
                assigned.add(a.name)
            self.values[a.name] = shp
            shapes.append((a.name, shp))
        missing = [n for n in outputs if n not in assigned]
        if missing:
            raise self.fail(f"output {missing[0]!r} never assigned", outputs[missing[0]].pos)
        return TypedProgram(self.p, tuple(shapes), frozenset(self.fused))

    # loops: loop var -> trip count; local: block-local name -> (shape, defining expr)
    def shape(self, e, loops, local, path) -> tuple[int, ...]:
        if isinstance(e, Num):
            return ()
        if isinstance(e, Var):
            if e.name in loops:
                return ()
            if e.name in local:
                return local[e.name][0]
            if e.name in self.values:
                return self.values[e.name]
            d = self.tensors.get(e.name)
            if d is None:
                raise self.fail(f"unknown identifier {e.name!r}", e.pos)
            if len(d.shape) != 1:
                raise self.fail(f"{e.name!r} has rank {len(d.shape)} and must be indexed", e.pos)
            return d.shape
        if isinstance(e, Index):
            return self.index(e, loops, local)
        if isinstance(e, BinOp):
            a = self.shape(e.lhs, loops, local, path + (0,))
            b = self.shape(e.rhs, loops, local, path + (1,))
            if a or b:
                raise self.fail(f"shape mismatch: '{e.op}' needs scalar operands", e.pos)
            return ()
        if isinstance(e, Call):
            for k, arg in enumerate(e.args):
                if self.shape(arg, loops, local, path + (k,)):
                    raise self.fail(f"shape mismatch: {e.fn} needs scalar operands", e.pos)
            return ()
        if isinstance(e, MapExpr):
            if e.trip.count < 1:
                raise self.fail("empty extent", e.pos)
            inner = dict(loops)
            inner[e.var] = e.trip.count
            scope = dict(local)
            for k, (name, bx) in enumerate(e.body.bindings):
                scope[name] = (self.shape(bx, inner, scope, path + (k,)), bx)
            if self.shape(e.body.result, inner, scope, path + (len(e.body.bindings),)):
                raise self.fail("shape mismatch: Map body must be scalar", e.pos)
            return (e.trip.count,)
        if isinstance(e, ReduceExpr):
            if e.op not in COMBINE_OPS:
                raise self.fail(f"non-associative combine {e.op!r}", e.pos)
            vs = self.shape(e.vec, loops, local, path + (0,))
            if len(vs) != 1:
                raise self.fail("shape mismatch: Reduce needs a vector", e.pos)
            if vs[0] < 1:
                raise self.fail("reduce over empty vector", e.pos)
            src = e.vec
            if isinstance(src, Var) and src.name in local:
                src = local[src.name][1]
            if isinstance(src, MapExpr):
                self.fused.add((self.stmt, path))
            return ()
        raise self.fail(f"unsupported expression {type(e).__name__}", getattr(e, "pos", None))

    def index(self, e: Index, loops, local) -> tuple[int, ...]:
        if e.name in local:
            shp = local[e.name][0]
        elif e.name in self.values:
            shp = self.values[e.name]
        elif e.name in self.tensors:
            shp = self.tensors[e.name].shape
        else:
            raise self.fail(f"unknown identifier {e.name!r}", e.pos)
        if len(e.indices) != len(shp):
            raise self.fail(f"shape mismatch: {e.name!r} has rank {len(shp)}, indexed with {len(e.indices)}", e.pos)
        for dim, ix in enumerate(e.indices):
            used = sorted(_loop_vars(ix, loops, self, e))
            if isinstance(ix, Var) and ix.name in loops and loops[ix.name] != shp[dim]:
                raise self.fail(
                    f"trip count {loops[ix.name]} of '{ix.name}' differs from extent {shp[dim]} of {e.name}[{dim}]", ix.pos)
            for combo in itertools.product(*(range(loops[v]) for v in used)):
                k = _eval_index(ix, dict(zip(used, combo)))
                if not 0 <= k < shp[dim]:
                    raise self.fail(f"index {k} out of bounds for {e.name}[{dim}] (extent {shp[dim]})", e.pos)
        return ()


def _loop_vars(ix, loops, chk, at) -> set:
    if isinstance(ix, Num):
        if ix.value != int(ix.value):
            raise chk.fail("index must be an integer expression", at.pos)
        return set()
    if isinstance(ix, Var):
        if ix.name not in loops:
            raise chk.fail(f"index {ix.name!r} is not a loop variable", ix.pos)
        return {ix.name}
    if isinstance(ix, BinOp):
        return _loop_vars(ix.lhs, loops, chk, at) | _loop_vars(ix.rhs, loops, chk, at)
    raise chk.fail("index must be an affine expression of loop variables", at.pos)


def _eval_index(ix, env) -> int:
    if isinstance(ix, Num):
        return int(ix.value)
    if isinstance(ix, Var):
        return env[ix.name]
    a, b = _eval_index(ix.lhs, env), _eval_index(ix.rhs, env)
    return {"add": a + b, "sub": a - b, "mul": a * b}[ix.op]


eval_index = _eval_index


def validate(p, mu_capacity: int = DEFAULT_MU_CAPACITY) -> TypedProgram:
    """Check shapes and annotate fused map-reduce pairs.

    Accepts an already-typed program, in which case the result is equal to the
    input (validation is idempotent).
    """
    if isinstance(p, TypedProgram):
        p = p.program
    return _Checker(p, mu_capacity).run()
