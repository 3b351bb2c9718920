"""Node kernels: what each unit of a dataflow graph computes for one input vector."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .. import fixpoint as fx
from ..frontend.interp import as_tensors, resolve_lut
from .build import needs_result
from .graph import DataflowGraph, Node
from .lanes import LEAVES, LaneContext, run_slice


@dataclass
class NodeValue:
    points: dict = field(default_factory=dict)  # (row, lane) -> {instr: raw}
    rows: dict = field(default_factory=dict)  # row -> partial (value, count) or epilogue state
    name: str = ""
    named: object = None  # the statement value a final node publishes
    group: int = -1


class Kernels:
    """Evaluates graph nodes with the same fixed-point kernels as the interpreter."""

    def __init__(self, g: DataflowGraph, weights: Mapping):
        self.g = g
        self.fmt = g.program.format
        self.weights = as_tensors(g.program, weights)
        self._luts: dict = {}

    def lut(self, name: str) -> fx.Lut:
        if name not in self._luts:
            self._luts[name] = resolve_lut(self.g.program, name)
        return self._luts[name]

    def source(self, nd: Node, preds: Sequence[NodeValue], inputs: Mapping | None = None) -> NodeValue:
        if nd.kind == "input":
            vec = [int(v) for v in inputs[nd.name]]
            if len(vec) != nd.lane_hi:
                raise ValueError(f"input {nd.name!r} expects {nd.lane_hi} values, got {len(vec)}")
            return NodeValue(name=nd.name, named=vec)
        return self.eval(nd, preds)

    def eval(self, nd: Node, preds: Sequence[NodeValue]) -> NodeValue:
        if nd.kind in ("weight", "const"):
            return NodeValue()
        if nd.kind in ("buffer", "output"):
            (src,) = [p for p in preds if p.named is not None]
            named = src.named
            if nd.kind == "output" and not isinstance(named, list):
                named = [named]
            return NodeValue(name=nd.name or src.name, named=named)
        return self.compute(nd, preds)

    @staticmethod
    def lanes_of(nd: Node, grp, r) -> range:
        """Inner indices of row r that this node's lanes hold."""
        if not nd.flat_u:
            return range(nd.lane_lo, nd.lane_hi)
        base = (r % nd.flat_u) * grp.width
        return range(max(nd.lane_lo - base, 0), max(min(nd.lane_hi - base, grp.width), 0))

    def compute(self, nd: Node, preds: Sequence[NodeValue]) -> NodeValue:
        g = self.g
        grp = g.groups[nd.group]
        prog = grp.prog
        fmt = self.fmt
        named = {p.name: p.named for p in preds if p.named is not None}
        # lane and row state only flows along a group's own chain
        preds = [p for p in preds if p.group == nd.group]

        def read(name, idx):
            v = named[name]
            return v if not isinstance(v, list) else v[idx[0] if idx else 0]

        def weight(name, idx):
            return self.weights[name][idx]

        rows = list(range(grp.rows)) if grp.rows else [None]
        out = NodeValue(group=nd.group)
        want = set(nd.instrs)
        if needs_result(nd, grp):
            want.add(prog.result)
        for k in list(want):
            want |= {a for a in prog.args(k) if prog.instrs[a][0] in LEAVES}
        if want:
            if grp.kind == "reduce":
                pts = [(r, j) for r in rows for j in self.lanes_of(nd, grp, r)]
            else:
                pts = [(r, None) for r in rows]
            for pt in pts:
                vals: dict = {}
                for p in preds:
                    if pt in p.points:
                        vals.update(p.points[pt])
                loops = {}
                if grp.ivar is not None and pt[0] is not None:
                    loops[grp.ivar] = pt[0]
                if grp.jvar is not None and pt[1] is not None:
                    loops[grp.jvar] = pt[1]
                ctx = LaneContext(fmt, loops, read, weight, self.lut)
                out.points[pt] = run_slice(prog, want, vals, ctx)

        if grp.kind == "reduce" and (nd.reduce or nd.role == "epilogue"):
            epi = grp.epilogue
            acc_id = next(k for k, ins in enumerate(epi.instrs) if ins[0] == "acc")
            for r in rows:
                if nd.role == "combine":
                    parts = sorted((p for p in preds if r in p.rows and isinstance(p.rows[r], tuple)),
                                   key=lambda p: p.rows[r][2])
                    part = fx.merge_partials([p.rows[r][:2] for p in parts], grp.op)
                    state = {acc_id: fx.finish_partial(part, grp.op, fmt)}
                elif nd.role == "epilogue":
                    state = {}
                    for p in preds:
                        if r in p.rows and isinstance(p.rows[r], dict):
                            state.update(p.rows[r])
                else:
                    span = self.lanes_of(nd, grp, r)
                    if not span:
                        continue
                    lane_vals = [out.points[(r, j)][prog.result] for j in span]
                    part = fx.partial_reduce(lane_vals, grp.op)
                    if nd.role == "tile":
                        out.rows[r] = (*part, span[0])
                        continue
                    state = {acc_id: fx.finish_partial(part, grp.op, fmt)}
                if nd.epi_instrs:
                    loops = {grp.ivar: r} if grp.ivar is not None and r is not None else {}
                    ctx = LaneContext(fmt, loops, read, weight, self.lut, acc=state[acc_id])
                    ids = set(nd.epi_instrs)
                    ids |= {a for k in nd.epi_instrs for a in epi.args(k) if epi.instrs[a][0] in LEAVES}
                    run_slice(epi, ids, state, ctx)
                out.rows[r] = state
            if nd.final:
                vec = [out.rows[r][epi.result] for r in rows]
                out.name, out.named = grp.stmt, (vec if grp.rows else vec[0])
        elif nd.final:
            vec = [out.points[(r, None)][prog.result] for r in rows]
            out.name, out.named = grp.stmt, (vec if grp.rows else vec[0])
        return out


def run_graph(g: DataflowGraph, weights: Mapping, inputs: Mapping[str, Sequence[int]]) -> dict[str, list[int]]:
    """Evaluate every node once in topological order; returns program outputs."""
    k = Kernels(g, weights)
    vals: dict[int, NodeValue] = {}
    for nid in g.topo():
        nd = g.nodes[nid]
        vals[nid] = k.source(nd, [vals[s] for s in g.preds(nid)], inputs)
    return {g.nodes[n].name: vals[n].named for n in vals if g.nodes[n].kind == "output"}
