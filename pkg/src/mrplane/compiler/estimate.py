"""Static performance model of a placed mapping."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from ..fabric import CostModel, FabricConfig, fabric_cost
from .place import Mapping


@dataclass(frozen=True)
class PerfReport:
    program: str
    latency_cycles: float
    latency_ns: float
    initiation_interval: int
    throughput_gpkts: float
    area_mm2: float
    power_mw: float
    overhead_area_pct: float
    overhead_power_pct: float
    cu_count: int
    mu_count: int
    link_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def node_cycles(m: Mapping, nid: int) -> float:
    cfg = m.cfg
    nd = m.graph.nodes[nid]
    if nd.kind == "cu":
        c = nd.levels + nd.epi_levels + (cfg.reduce_cycles if nd.reduce else 0)
        if nd.final and nd.ii > 1:
            # the last of ceil(N/U) rows leaves ii - 1 cycles after the first
            c += nd.ii - 1
        return c
    if nd.kind == "lut":
        return cfg.lut_cycles
    if nd.kind == "buffer":
        return cfg.buffer_cycles
    return 0


def wire_cycles(cfg: FabricConfig, hops: int) -> float:
    """Cycles to move a vector across a route of the given number of hops."""
    if hops <= 0:
        return 0.0
    return cfg.movement_cycles + cfg.hop_cycles * (hops - 1)


def timing(m: Mapping) -> float:
    """Critical-path latency in cycles: node compute plus movement on data wires."""
    g = m.graph
    mv = m.cfg.movement_cycles
    incoming: dict = {}
    for w in m.wires:
        if not w.static:
            incoming.setdefault((w.dst, w.dst_copy), []).append(w)
    arrival: dict = {}
    latency = 0.0
    for nid in g.topo():
        nd = g.nodes[nid]
        copies = 1 if nd.kind in ("input", "output", "weight", "const") else nd.copies
        for k in range(copies):
            ready = 0.0
            for w in incoming.get((nid, k), []):
                ready = max(ready, arrival[(w.src, w.src_copy)] + wire_cycles(m.cfg, w.hops))
            t = ready + node_cycles(m, nid)
            if nd.kind == "output" and nd.lane_hi > 1:
                # vector results pass through a write-back buffer into the header vector
                t += m.cfg.buffer_cycles + mv
            arrival[(nid, k)] = t
            if nd.kind == "output":
                latency = max(latency, t)
    m.arrival = arrival
    m.latency_cycles = latency
    return latency


def estimate(m: Mapping, cfg: FabricConfig | None = None, cost: CostModel | None = None) -> PerfReport:
    cfg = cfg or m.cfg
    lat = timing(m)
    c = fabric_cost(cfg, m.used_cus, m.used_mus, m.used_links, cost)
    ii = m.initiation_interval
    return PerfReport(
        program=m.graph.program.name,
        latency_cycles=lat,
        latency_ns=lat / cfg.clock_ghz,
        initiation_interval=ii,
        throughput_gpkts=cfg.clock_ghz / ii,
        area_mm2=c.area_mm2,
        power_mw=c.power_mw,
        overhead_area_pct=c.overhead_area_pct,
        overhead_power_pct=c.overhead_power_pct,
        cu_count=m.used_cus,
        mu_count=m.used_mus,
        link_count=m.used_links,
    )
