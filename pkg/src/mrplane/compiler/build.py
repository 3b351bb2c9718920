"""Turning groups into graph nodes: lower, unroll and split."""

from __future__ import annotations

import math

from ..fabric import FabricConfig
from ..frontend.validate import TypedProgram, validate
from .graph import CompileError, DataflowGraph, Group, Node, lower_groups
from .lanes import LaneProgram, schedule

_UNBOUNDED = 1 << 30


def _leaf_args(prog: LaneProgram, ids) -> set[int]:
    out = set()
    for k in ids:
        for a in prog.args(k):
            if prog.instrs[a][0] in ("read", "weight", "const", "loop", "acc"):
                out.add(a)
    return out


def needs_result(nd: Node, grp: Group) -> bool:
    """Whether the node consumes the lane program's final value (to reduce or emit it)."""
    if nd.kind != "cu":
        return False
    if grp.kind == "reduce":
        return bool(nd.reduce) and nd.role in ("", "tile")
    return nd.final


def _packable(grp: Group) -> bool:
    """Rows can share a CU when every lane reads the same relative input location."""
    for ins in grp.prog.instrs:
        if ins[0] == "read" and any(_mentions(ix, grp.ivar) for ix in ins[2]):
            return False
    return True


def _mentions(ix, var) -> bool:
    from ..frontend.ast import BinOp, Var
    if isinstance(ix, Var):
        return ix.name == var
    if isinstance(ix, BinOp):
        return _mentions(ix.lhs, var) or _mentions(ix.rhs, var)
    return False


class _Builder:
    def __init__(self, g: DataflowGraph, cfg: FabricConfig | None):
        self.g = g
        self.cfg = cfg
        self.lanes = cfg.lanes if cfg else _UNBOUNDED
        self.stages = cfg.stages if cfg else _UNBOUNDED
        self.final: dict[str, int] = {}
        # node id -> lanes active per copy
        self.active: dict[int, int] = {}

    def build(self) -> DataflowGraph:
        g = self.g
        for d in g.program.inputs:
            n = g.add("input", name=d.name, lane_hi=d.shape[0])
            self.final[d.name] = n.id
        for gi, grp in enumerate(g.groups):
            self.group(gi, grp)
        self.memories()
        self.connect()
        return g

    # -- chains

    def unroll_factor(self, gi: int, grp: Group) -> int:
        n = max(grp.rows, 1)
        u = self.g.unroll.get(gi, grp.par if grp.par is not None else n)
        return max(1, min(int(u), n))

    def lane_use(self, grp: Group, lo: int, hi: int, pack: int, u: int) -> int:
        if grp.kind == "elem":
            return min(u, self.lanes)
        return min((hi - lo) * pack, self.lanes)

    def group(self, gi: int, grp: Group):
        g = self.g
        prog = grp.prog
        phase, level = schedule(prog)
        last = phase[prog.result]
        S = self.stages
        if grp.kind == "reduce":
            n = max(grp.rows, 1)
            u = self.unroll_factor(gi, grp)
            ii = math.ceil(n / u)
            t = math.ceil(grp.width / self.lanes)
            tiles = [(k * self.lanes, min(grp.width, (k + 1) * self.lanes)) for k in range(t)]
            pack = 1
            if t == 1 and grp.rows > 1 and _packable(grp) and self.cfg is not None:
                pack = max(1, min(u, self.lanes // grp.width))
            chain_copies = math.ceil(u / pack)
            flat_u = 0
            if self.cfg is not None and grp.rows > 1 and _packable(grp):
                # lay row slots end to end; rows crossing a CU boundary are merged later
                total = u * grp.width
                flat = math.ceil(total / self.lanes)
                if flat < t * chain_copies:
                    flat_u = u
                    tiles = [(k * self.lanes, min(total, (k + 1) * self.lanes)) for k in range(flat)]
                    pack, chain_copies = 1, 1
            ephase, elevel = schedule(grp.epilogue)
            epi_ops = grp.epilogue.ops()
            epi_depth = max((elevel[k] for k in epi_ops), default=0)
        else:
            n = max(grp.rows, 1)
            u = self.unroll_factor(gi, grp) if self.cfg is not None else n
            ii = math.ceil(n / u)
            tiles = [(0, n)]
            pack = 1
            flat_u = 0
            chain_copies = math.ceil(u / self.lanes)
            epi_ops, epi_depth, elevel = [], 0, {}

        tail_ids = []
        for lo, hi in tiles:
            prev = None
            for p in range(last + 1):
                for k in prog.luts():
                    if phase[k] == p:
                        nd = g.add("lut", group=gi, name=prog.instrs[k][1], phase=p, instrs=(k,),
                                   lane_lo=lo, lane_hi=hi, flat_u=flat_u, copies=chain_copies, ii=ii)
                        self.active[nd.id] = self.lane_use(grp, lo, hi, pack, u)
                        prev = nd
                alu = [k for k in prog.ops() if phase[k] == p and prog.instrs[k][0] != "lut"]
                depth = max((level[k] for k in alu), default=0)
                slots = [("alu", lv) for lv in range(1, depth + 1)]
                if p == last:
                    if grp.kind == "reduce":
                        slots.append(("reduce", 0))
                        if len(tiles) == 1:
                            slots += [("epi", lv) for lv in range(1, epi_depth + 1)]
                    elif not slots and prog.instrs[prog.result][0] != "lut":
                        slots.append(("move", 0))
                for c in range(0, len(slots), S):
                    chunk = slots[c:c + S]
                    alv = {lv for kind, lv in chunk if kind == "alu"}
                    elv = {lv for kind, lv in chunk if kind == "epi"}
                    has_red = any(kind == "reduce" for kind, _ in chunk)
                    after_red = grp.kind == "reduce" and p == last and not has_red and not alv
                    role = "tile" if has_red and len(tiles) > 1 else ("epilogue" if after_red else "")
                    copies = math.ceil(u / self.lanes) if after_red else chain_copies
                    nd = g.add("cu", group=gi, phase=p, lane_lo=lo, lane_hi=hi, flat_u=flat_u,
                               instrs=tuple(k for k in alu if level[k] in alv),
                               levels=len(alv) + sum(1 for kind, _ in chunk if kind == "move"),
                               reduce=grp.op if has_red else "", role=role,
                               epi_instrs=tuple(k for k in epi_ops if elevel[k] in elv),
                               epi_levels=len(elv), copies=copies, ii=ii)
                    self.active[nd.id] = min(u, self.lanes) if after_red else self.lane_use(grp, lo, hi, pack, u)
                    prev = nd
            tail_ids.append(prev.id)
        if len(tiles) > 1:
            slots = [("reduce", 0)] + [("epi", lv) for lv in range(1, epi_depth + 1)]
            rc = max(1, self.lanes // len(tiles))
            # partial sums entering the combine stage per pass
            parts = u + len(tiles) - 1 if flat_u else len(tiles) * u
            for c in range(0, len(slots), S):
                chunk = slots[c:c + S]
                elv = {lv for kind, lv in chunk if kind == "epi"}
                first = c == 0
                if flat_u:
                    copies = math.ceil(parts / self.lanes) if first else math.ceil(u / self.lanes)
                else:
                    copies = math.ceil(u / rc) if first else math.ceil(u / self.lanes)
                nd = g.add("cu", group=gi, phase=last, lane_lo=0, lane_hi=grp.width,
                           reduce=grp.op if first else "", role="combine" if first else "epilogue",
                           epi_instrs=tuple(k for k in epi_ops if elevel[k] in elv),
                           epi_levels=len(elv), copies=copies, ii=ii)
                if flat_u:
                    self.active[nd.id] = min(parts, self.lanes) if first else min(u, self.lanes)
                else:
                    self.active[nd.id] = min(len(tiles) * min(u, rc), self.lanes) if first else min(u, self.lanes)
        final = g.nodes[-1]
        final.final = True
        self.final[grp.stmt] = final.id

    # -- memories

    def uses(self, nd: Node) -> list[tuple]:
        """Leaf instrs an executing node evaluates locally."""
        grp = self.g.groups[nd.group]
        ids = set(nd.instrs)
        leaves = {grp.prog.instrs[k] for k in _leaf_args(grp.prog, ids)}
        r = grp.prog.result
        if needs_result(nd, grp) and grp.prog.instrs[r][0] in ("read", "weight", "const", "loop"):
            leaves.add(grp.prog.instrs[r])
        if nd.epi_instrs:
            leaves |= {grp.epilogue.instrs[k] for k in _leaf_args(grp.epilogue, nd.epi_instrs)}
        return sorted(leaves, key=repr)

    def memories(self):
        g = self.g
        p = g.program
        execs = [nd for nd in g.nodes if nd.kind in ("cu", "lut")]
        const_users = []
        for nd in execs:
            grp = g.groups[nd.group]
            ins = [grp.prog.instrs[k] for k in nd.instrs]
            if nd.epi_instrs:
                ins += [grp.epilogue.instrs[k] for k in nd.epi_instrs]
            leaves = self.uses(nd)
            if any(x[0] == "leaky_relu" for x in ins) or any(
                    x[0] == "loop" or (x[0] == "const" and x[1] != 0) for x in leaves):
                const_users.append(nd.id)
        self.serves: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for w in p.weights:
            demand = []  # (node, copy, words per cycle)
            for nd in execs:
                k = sum(1 for x in self.uses(nd) if x[0] == "weight" and x[1] == w.name)
                if k:
                    demand += [(nd.id, c, k * self.active.get(nd.id, 1)) for c in range(nd.copies)]
            if not demand:
                continue
            reads = sum(r for _, _, r in demand)
            if self.cfg is None:
                by_reads = by_words = 1
            else:
                by_reads = math.ceil(reads / self.cfg.mu_banks)
                by_words = math.ceil(w.size / self.cfg.mu_capacity)
            ids = []
            for b in range(max(by_reads, by_words)):
                share = reads // max(by_reads, by_words) + (1 if b < reads % max(by_reads, by_words) else 0)
                ids.append(g.add("weight", name=w.name, words=w.size, reads=share, bank=b).id)
            if by_words >= by_reads:
                # words are split by address, so every reader touches every unit
                for m in ids:
                    for nid, c, _ in demand:
                        self.serves.setdefault((m, nid), []).append((0, c))
                continue
            # otherwise fill units bank by bank in consumer order
            b, room = 0, self.cfg.mu_banks
            for nid, c, r in demand:
                while r > 0:
                    take = min(r, room)
                    pair = self.serves.setdefault((ids[b], nid), [])
                    if (0, c) not in pair:
                        pair.append((0, c))
                    r -= take
                    room -= take
                    if room == 0 and b + 1 < len(ids):
                        b, room = b + 1, self.cfg.mu_banks
        if const_users:
            g.add("const", name="%const", reads=len(const_users))
        self.const_users = set(const_users)

    # -- edges

    def connect(self):
        g = self.g
        edges: set = set()
        produced: dict[tuple, int] = {}  # (group, tile lo, instr) -> node
        for nd in g.nodes:
            if nd.kind in ("cu", "lut"):
                for k in nd.instrs:
                    produced[(nd.group, nd.lane_lo, k)] = nd.id
        const_node = None
        for nd in g.nodes:
            if nd.kind == "const":
                const_node = nd.id
        readers: dict[str, list[int]] = {}
        for nd in g.nodes:
            if nd.kind not in ("cu", "lut"):
                continue
            grp = g.groups[nd.group]
            prog = grp.prog
            need = set()
            for k in nd.instrs:
                need |= set(prog.args(k))
            if needs_result(nd, grp):
                need.add(prog.result)
            for a in sorted(need - set(nd.instrs)):
                if prog.instrs[a][0] in ("read", "weight", "const", "loop", "acc"):
                    continue
                src = produced.get((nd.group, nd.lane_lo, a))
                if src is None:
                    raise CompileError(f"no producer for lane value {a} in {grp.stmt}")
                edges.add((src, nd.id, False))
            if nd.role == "combine":
                for m in g.nodes:
                    if m.group == nd.group and m.role == "tile":
                        edges.add((m.id, nd.id, False))
            elif nd.role == "epilogue" or (nd.epi_instrs and not nd.reduce):
                prev = max(m.id for m in g.nodes if m.group == nd.group and m.id < nd.id and m.kind == "cu")
                edges.add((prev, nd.id, False))
            for leaf in self.uses(nd):
                if leaf[0] == "read":
                    readers.setdefault(leaf[1], []).append(nd.id)
            if nd.id in self.const_users:
                edges.add((const_node, nd.id, True))
        for (m, nid), pair in self.serves.items():
            edges.add((m, nid, True))
            g.pairs[(m, nid)] = sorted(pair)
        # named values, through a gather buffer where many units produce and many consume
        for name, users in readers.items():
            src = self.final.get(name)
            if src is None:
                raise CompileError(f"no producer for {name!r}")
            s = g.nodes[src]
            fanout = sum(g.nodes[u].copies for u in set(users))
            if s.kind != "input" and (s.ii > 1 or (s.copies > 1 and fanout > 1)):
                buf = g.add("buffer", name=name, words=max(s.lane_hi, 1), reads=fanout)
                edges.add((src, buf.id, False))
                src = buf.id
            for u in set(users):
                edges.add((src, u, False))
        for d in g.program.outputs:
            o = g.add("output", name=d.name, lane_hi=d.shape[0])
            edges.add((self.final[d.name], o.id, False))
        g.edges = sorted(edges)


def build(typed: TypedProgram, groups: list[Group], unroll: dict, cfg: FabricConfig | None) -> DataflowGraph:
    g = DataflowGraph(typed, list(groups), unroll=dict(unroll))
    return _Builder(g, cfg).build()


def lower(p, cfg: FabricConfig | None = None) -> DataflowGraph:
    """Program to dataflow graph, one node per phase of each group, before fitting to a fabric."""
    typed = validate(p) if not isinstance(p, TypedProgram) else p
    groups = lower_groups(typed, cfg or FabricConfig())
    return build(typed, groups, {}, None)


def unroll(g: DataflowGraph, factor: int) -> DataflowGraph:
    """Set the spatial unroll factor of every outer row loop."""
    if factor < 1:
        raise CompileError("unroll factor must be >= 1")
    u = {gi: factor for gi, grp in enumerate(g.groups) if grp.looped}
    out = build(g.typed, g.groups, {**g.unroll, **u}, g.fitted)
    out.fitted = g.fitted
    return out


def split(g: DataflowGraph, cfg: FabricConfig) -> DataflowGraph:
    """Fit every node to the CU lane/stage budget and every memory to the bank budget."""
    out = build(g.typed, g.groups, g.unroll, cfg)
    out.fitted = cfg
    return out
