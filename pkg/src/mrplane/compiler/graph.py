"""Dataflow graph built from a typed program.

A program is first rewritten into *groups*: each is either a row reduction
(an optional outer loop over rows, a reduction across lanes, and an optional
per-row epilogue) or an element map (a SIMD op over a vector). Each group then
becomes a chain of CU nodes, with LUT lookups as memory-unit nodes between them.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field

from ..fabric import FabricConfig
from ..frontend.ast import (
    BinOp, Block, Call, Index, MapExpr, ReduceExpr, TripCount, Var, children,
)
from ..frontend.validate import TypedProgram
from .lanes import LaneProgram, build_lane_program


class CompileError(Exception):
    pass


IDENTITY_EPILOGUE = LaneProgram((("acc",),), 0)


@dataclass(frozen=True)
class Group:
    stmt: str
    kind: str  # "reduce" | "elem"
    rows: int  # 0 for a scalar result
    ivar: str | None
    prog: LaneProgram  # per-lane body (reduce: element function over ivar, jvar)
    width: int = 1  # reduce: inner trip count
    jvar: str | None = None
    op: str = ""
    epilogue: LaneProgram | None = None  # per-row code applied to the reduction result
    par: int | None = None
    output: bool = False

    @property
    def looped(self) -> bool:
        return self.kind == "reduce" and self.rows > 1


@dataclass
class Node:
    id: int
    kind: str  # input | output | cu | lut | weight | const | buffer
    group: int = -1
    name: str = ""
    phase: int = 0
    instrs: tuple = ()
    levels: int = 0
    reduce: str = ""
    role: str = ""  # "" | tile | combine
    lane_lo: int = 0
    lane_hi: int = 1
    flat_u: int = 0  # rows laid end to end across lanes, u row slots per pass
    epi_instrs: tuple = ()
    epi_levels: int = 0
    final: bool = False
    copies: int = 1
    ii: int = 1
    words: int = 0
    reads: int = 0  # words requested per cycle (memory nodes)
    bank: int = 0  # index among the memory nodes that share one tensor

    @property
    def is_memory(self) -> bool:
        return self.kind in ("lut", "weight", "const", "buffer")

    @property
    def width(self) -> int:
        return self.lane_hi - self.lane_lo


@dataclass
class DataflowGraph:
    typed: TypedProgram
    groups: list[Group]
    nodes: list[Node] = field(default_factory=list)
    # (src, dst, static): static edges deliver weights/constants and are off the critical path
    edges: list[tuple[int, int, bool]] = field(default_factory=list)
    unroll: dict[int, int] = field(default_factory=dict)  # group index -> U
    fitted: FabricConfig | None = None  # set once split to a fabric
    # (src, dst) -> explicit copy pairs, for memories that serve only some copies
    pairs: dict[tuple[int, int], list[tuple[int, int]]] = field(default_factory=dict)

    @property
    def program(self):
        return self.typed.program

    def node(self, nid: int) -> Node:
        return self.nodes[nid]

    def add(self, kind: str, **kw) -> Node:
        n = Node(len(self.nodes), kind, **kw)
        self.nodes.append(n)
        return n

    def preds(self, nid: int, static: bool | None = None) -> list[int]:
        return [s for s, d, st in self.edges if d == nid and (static is None or st == static)]

    def succs(self, nid: int) -> list[int]:
        return [d for s, d, _ in self.edges if s == nid]

    def topo(self) -> list[int]:
        indeg = {n.id: 0 for n in self.nodes}
        for _, d, _ in self.edges:
            indeg[d] += 1
        ready = sorted(k for k, v in indeg.items() if v == 0)
        order = []
        while ready:
            k = ready.pop(0)
            order.append(k)
            for d in sorted(self.succs(k)):
                indeg[d] -= 1
                if indeg[d] == 0:
                    ready.append(d)
            ready.sort()
        if len(order) != len(self.nodes):
            raise CompileError("dataflow graph has a cycle")
        return order

    @property
    def initiation_interval(self) -> int:
        return max((n.ii for n in self.nodes), default=1)

    def copy(self) -> "DataflowGraph":
        return DataflowGraph(self.typed, list(self.groups), [dataclasses.replace(n) for n in self.nodes],
                             list(self.edges), dict(self.unroll), self.fitted, dict(self.pairs))


# ---------------------------------------------------------------- rewriting

def _inline(e, env: dict):
    """Substitute block-local bindings so bodies become single expressions."""
    if isinstance(e, Var):
        return env.get(e.name, e)
    if isinstance(e, Index):
        if e.name in env:
            raise CompileError(f"indexing the block-local vector {e.name!r} is not supported")
        return e
    if isinstance(e, BinOp):
        return BinOp(e.op, _inline(e.lhs, env), _inline(e.rhs, env), e.pos)
    if isinstance(e, Call):
        return Call(e.fn, tuple(_inline(a, env) for a in e.args), e.pos)
    if isinstance(e, MapExpr):
        inner = {k: v for k, v in env.items() if k != e.var}
        for name, bx in e.body.bindings:
            inner[name] = _inline(bx, inner)
        return MapExpr(e.trip, e.var, Block((), _inline(e.body.result, inner)), e.pos)
    if isinstance(e, ReduceExpr):
        return ReduceExpr(_inline(e.vec, env), e.op, e.x, e.y, e.pos)
    return e


def _free_loops(e, loops: frozenset) -> set:
    if isinstance(e, Var):
        return {e.name} & loops
    if isinstance(e, MapExpr):
        return _free_loops(e.body.result, loops - {e.var})
    out = set()
    for c in children(e):
        out |= _free_loops(c, loops)
    return out


class _Lowerer:
    def __init__(self, typed: TypedProgram, cfg: FabricConfig):
        self.typed = typed
        self.p = typed.program
        self.cfg = cfg
        self.fmt = self.p.format
        self.weights = {w.name for w in self.p.weights}
        self.shapes = {d.name: d.shape for d in self.p.inputs}
        self.outputs = {d.name for d in self.p.outputs}
        self.groups: list[Group] = []
        self.fresh = itertools.count()

    def temp(self) -> str:
        return f"%t{next(self.fresh)}"

    def run(self) -> list[Group]:
        for a in self.p.body:
            e = _inline(a.expr, {})
            self.statement(a.name, e, a.name in self.outputs)
        return self.groups

    def vector_len(self, name: str) -> int | None:
        shp = self.shapes.get(name)
        if shp is None and name in self.weights:
            shp = self.p.decl(name).shape
        return shp[0] if shp else None

    def as_map(self, vec) -> MapExpr:
        if isinstance(vec, MapExpr):
            return vec
        if isinstance(vec, Var):
            n = self.vector_len(vec.name)
            if n is None:
                raise CompileError(f"{vec.name!r} is not a vector")
            j = f"%j{next(self.fresh)}"
            return MapExpr(TripCount(n), j, Block((), Index(vec.name, (Var(j),))))
        raise CompileError("reduce needs a vector operand")

    def hoist(self, e, loops: frozenset, top: bool = False):
        """Lift reductions that do not depend on enclosing loops into their own statements."""
        if isinstance(e, ReduceExpr):
            vec = self.hoist(e.vec, loops) if not isinstance(e.vec, (Var, MapExpr)) else e.vec
            if isinstance(vec, MapExpr):
                inner = loops | {vec.var}
                vec = MapExpr(vec.trip, vec.var, Block((), self.hoist(vec.body.result, inner)), vec.pos)
            e = ReduceExpr(vec, e.op, e.x, e.y, e.pos)
            if not top and not _free_loops(e, loops):
                name = self.temp()
                self.statement(name, e, False)
                return Var(name)
            return e
        if isinstance(e, MapExpr):
            body = self.hoist(e.body.result, loops | {e.var})
            return MapExpr(e.trip, e.var, Block((), body), e.pos)
        if isinstance(e, BinOp):
            return BinOp(e.op, self.hoist(e.lhs, loops, top), self.hoist(e.rhs, loops, top), e.pos)
        if isinstance(e, Call):
            return Call(e.fn, tuple(self.hoist(a, loops, top) for a in e.args), e.pos)
        return e

    def statement(self, name: str, e, is_output: bool):
        e = self.hoist(e, frozenset(), top=True)
        if isinstance(e, Var) and self.vector_len(e.name) is not None:
            i = f"%i{next(self.fresh)}"
            e = MapExpr(TripCount(self.vector_len(e.name)), i, Block((), Index(e.name, (Var(i),))))
        if isinstance(e, MapExpr):
            self.map_group(name, e.trip.count, e.var, e.body.result, e.trip.par, is_output)
        else:
            self.map_group(name, 0, None, e, None, is_output)
        n = self.groups[-1].rows
        self.shapes[name] = (n,) if n else ()

    def add(self, g: Group):
        if any(x.stmt == g.stmt for x in self.groups):
            raise CompileError(f"duplicate statement {g.stmt!r}")
        self.groups.append(g)

    def reduce_group(self, name, rows, ivar, red: ReduceExpr, epilogue, par, is_output):
        m = self.as_map(red.vec)
        loops = {m.var} | ({ivar} if ivar else set())
        body = m.body.result
        if any(isinstance(x, (ReduceExpr, MapExpr)) for x in _walk(body)):
            raise CompileError(f"{name}: nested reduction depends on both loop levels")
        prog = build_lane_program(body, self.fmt, self.weights, loops)
        if epilogue is None:
            epilogue = IDENTITY_EPILOGUE
        self.add(Group(name, "reduce", rows, ivar, prog, m.trip.count, m.var, red.op,
                       epilogue, par, is_output))

    def map_group(self, name: str, n: int, i: str | None, body, par, is_output: bool):
        """A Map over n rows (n = 0: a scalar expression) whose body may hold row reductions."""
        loops = {i} if i else set()
        reds = _row_reductions(body)
        if not reds:
            prog = build_lane_program(body, self.fmt, self.weights, loops)
            self.add(Group(name, "elem", n, i, prog, par=par, output=is_output))
            return
        if len(reds) == 1 and reds[0] is body:
            self.reduce_group(name, n, i, body, None, par, is_output)
            return
        if len(reds) == 1:
            red = reds[0]
            epi = build_lane_program(body, self.fmt, self.weights, loops,
                                     subst=lambda b, x: b.emit(("acc",)) if x is red else None)
            if self.fusible(epi):
                self.reduce_group(name, n, i, red, epi, par, is_output)
                return
        names = {}
        for red in reds:
            t = self.temp()
            self.reduce_group(t, n, i, red, None, par, False)
            self.shapes[t] = (n,) if n else ()
            names[id(red)] = t
        idx = (Var(i),) if i else ()
        prog = build_lane_program(
            body, self.fmt, self.weights, loops,
            subst=lambda b, x: b.emit(("read", names[id(x)], idx)) if id(x) in names else None)
        self.add(Group(name, "elem", n, i, prog, par=par, output=is_output))

    def fusible(self, epi: LaneProgram) -> bool:
        # a per-row epilogue rides on the reducing chain unless it needs a
        # memory lookup; whether it shares the reducing CU is decided by split
        return not epi.luts()


def _walk(e):
    yield e
    for c in children(e):
        yield from _walk(c)


def _row_reductions(e) -> list:
    """Reductions inside a Map body, outermost first, not descending into them."""
    if isinstance(e, ReduceExpr):
        return [e]
    out = []
    for c in children(e):
        out.extend(_row_reductions(c))
    return out


def lower_groups(typed: TypedProgram, cfg: FabricConfig) -> list[Group]:
    return prune(_Lowerer(typed, cfg).run(), {d.name for d in typed.program.outputs})


def prune(groups: list[Group], outputs: set) -> list[Group]:
    """Drop groups whose results never reach an output."""
    live = set(outputs)
    keep = []
    for grp in reversed(groups):
        if grp.stmt not in live:
            continue
        keep.append(grp)
        live |= grp.prog.reads()
        if grp.epilogue is not None:
            live |= grp.epilogue.reads()
    return keep[::-1]
