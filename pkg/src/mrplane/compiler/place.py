"""Greedy placement and shortest-path routing onto the CU/MU checkerboard."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from ..fabric import FabricConfig
from .graph import CompileError, DataflowGraph

Coord = tuple[int, int]
TRACKS_PER_LINK = 32
# the header vector enters and leaves the block beside the top-left unit
PORT: Coord = (0, -1)


@dataclass
class Wire:
    src: int  # node id
    src_copy: int
    dst: int
    dst_copy: int
    path: tuple  # grid coordinates, ports sit at column -1
    static: bool

    @property
    def hops(self) -> int:
        return len(self.path) - 1


@dataclass
class Mapping:
    graph: DataflowGraph
    cfg: FabricConfig
    placement: dict[int, list[Coord]] = field(default_factory=dict)
    wires: list[Wire] = field(default_factory=list)
    initiation_interval: int = 1
    latency_cycles: float = 0.0
    arrival: dict = field(default_factory=dict)  # (node, copy) -> cycle its result is ready

    def units(self, kind: str) -> list[Coord]:
        out = []
        for nid, coords in self.placement.items():
            k = self.graph.nodes[nid].kind
            if (kind == "cu") == (k == "cu"):
                out.extend(coords)
        return out

    @property
    def used_cus(self) -> int:
        return len(self.units("cu"))

    @property
    def used_mus(self) -> int:
        return len(self.units("mu"))

    @property
    def used_links(self) -> int:
        """Point-to-point links out of CUs and ports, plus one read bus per memory unit."""
        g = self.graph
        buses = set()
        p2p = set()
        for w in self.wires:
            s = g.nodes[w.src]
            if s.is_memory:
                buses.add((w.src, w.src_copy))
            else:
                p2p.add((w.src, w.src_copy, w.dst, w.dst_copy))
        return len(buses) + len(p2p)

    def unit_of(self, nid: int, copy: int) -> Coord | None:
        c = self.placement.get(nid)
        return c[copy] if c else None


def _manhattan(a: Coord, b: Coord) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _copy_pairs(g: DataflowGraph, s: int, d: int) -> list[tuple[int, int]]:
    """Which copies of a producer feed which copies of a consumer."""
    if (s, d) in g.pairs:
        return g.pairs[(s, d)]
    sn, dn = g.nodes[s], g.nodes[d]
    sc = 1 if sn.kind in ("input", "output") else sn.copies
    dc = 1 if dn.kind in ("input", "output") else dn.copies
    if sc == dc and sn.group == dn.group and sn.group >= 0:
        return [(k, k) for k in range(sc)]
    return [(a, b) for a in range(sc) for b in range(dc)]


class _Placer:
    def __init__(self, g: DataflowGraph, cfg: FabricConfig):
        self.g = g
        self.cfg = cfg
        self.free = {"cu": [], "mu": []}
        for kind, r, c in cfg.units():
            self.free[kind].append((r, c))
        self.place: dict[int, list[Coord]] = {}

    def port_dist(self, u: Coord) -> int:
        return _manhattan(u, PORT)

    def pick(self, kind: str, anchors: list, nid: int) -> Coord:
        free = self.free[kind]
        if not free:
            raise CompileError(f"insufficient units: no free {kind.upper()} for node {nid}")

        def cost(u):
            return sum(self.port_dist(u) if a is None else _manhattan(u, a) for a in anchors)

        best = min(free, key=lambda u: (cost(u), u))
        free.remove(best)
        return best

    def anchors(self, nid: int, copy: int, static: bool) -> list:
        g = self.g
        out = []
        edges = [(s, d) for s, d, st in g.edges if (d == nid if not static else s == nid)]
        for s, d in edges:
            other = s if not static else d
            on = g.nodes[other]
            if on.kind in ("input", "output"):
                out.append(None)
                continue
            if other not in self.place:
                continue
            for a, b in _copy_pairs(g, s, d):
                mine, theirs = (b, a) if not static else (a, b)
                if mine == copy and self.place[other][theirs] is not None:
                    out.append(self.place[other][theirs])
        if not static:
            # pull producers of program outputs toward the port
            out += [None for d in g.succs(nid) if g.nodes[d].kind == "output"]
        return out

    def bundles(self) -> list[list[int]]:
        """Runs of same-group nodes with equal copy counts, placed copy by copy."""
        g = self.g
        out: list[list[int]] = []
        for nid in g.topo():
            nd = g.nodes[nid]
            if nd.kind not in ("cu", "lut", "buffer"):
                continue
            if out:
                last = g.nodes[out[-1][-1]]
                if last.group == nd.group >= 0 and last.copies == nd.copies:
                    out[-1].append(nid)
                    continue
            out.append([nid])
        return out

    def run(self) -> dict[int, list[Coord]]:
        g = self.g
        for bundle in self.bundles():
            copies = g.nodes[bundle[0]].copies
            for nid in bundle:
                self.place[nid] = [None] * copies
            for k in range(copies):
                for nid in bundle:
                    kind = "cu" if g.nodes[nid].kind == "cu" else "mu"
                    self.place[nid][k] = self.pick(kind, self.anchors(nid, k, False), nid)
        for nid in g.topo():
            nd = g.nodes[nid]
            if nd.kind in ("weight", "const"):
                self.place[nid] = [self.pick("mu", self.anchors(nid, 0, True), nid)]
        return self.place


def _route(a: Coord, b: Coord, cfg: FabricConfig) -> tuple:
    """Shortest path over grid neighbours; the port sits just outside the grid."""
    if a == b:
        return (a,)
    prev = {a: None}
    q = deque([a])
    while q:
        u = q.popleft()
        if u == b:
            break
        r, c = u
        for v in ((r, c + 1), (r + 1, c), (r, c - 1), (r - 1, c)):
            if v in prev:
                continue
            if v == b or (0 <= v[0] < cfg.rows and 0 <= v[1] < cfg.cols):
                prev[v] = u
                q.append(v)
    path = [b]
    while path[-1] != a:
        path.append(prev[path[-1]])
    return tuple(reversed(path))


def place_and_route(g: DataflowGraph, cfg: FabricConfig) -> Mapping:
    if g.fitted is None:
        from .build import split
        g = split(g, cfg)
    place = _Placer(g, cfg).run()
    m = Mapping(g, cfg, place, initiation_interval=max(1, g.initiation_interval))
    usage: dict = {}
    for s, d, static in g.edges:
        sn, dn = g.nodes[s], g.nodes[d]
        for a, b in _copy_pairs(g, s, d):
            src = PORT if sn.kind == "input" else place[s][a]
            dst = PORT if dn.kind == "output" else place[d][b]
            path = _route(src, dst, cfg)
            for u, v in zip(path, path[1:]):
                if PORT in (u, v):
                    continue  # the header-vector bus is not a fabric link
                key = (min(u, v), max(u, v))
                # copies of one value fanning out share a track
                usage.setdefault(key, set()).add((s, a))
                if len(usage[key]) > TRACKS_PER_LINK:
                    raise CompileError(f"unroutable congestion on link {key}")
            m.wires.append(Wire(s, a, d, b, path, static))
    return m
