"""Text formats for mappings and performance reports."""

from __future__ import annotations

from .estimate import PerfReport
from .place import Mapping

MAPPING_FORMAT = "mrplane-mapping 1"
REPORT_FORMAT = "mrplane-perf 1"


def _coord(c) -> str:
    return f"{c[0]},{c[1]}"


def mapping_summary(m: Mapping) -> dict:
    g = m.graph
    units = []
    for nid in sorted(m.placement):
        nd = g.nodes[nid]
        for k, c in enumerate(m.placement[nid]):
            units.append((nid, k, nd.kind, nd.name or g.groups[nd.group].stmt if nd.group >= 0 else nd.name,
                          c[0], c[1]))
    wires = [(w.src, w.src_copy, w.dst, w.dst_copy, int(w.static), tuple(w.path)) for w in m.wires]
    return {
        "program": g.program.name,
        "initiation_interval": m.initiation_interval,
        "latency_cycles": m.latency_cycles,
        "units": units,
        "wires": wires,
    }


def format_mapping(m: Mapping, header: str = "") -> str:
    s = mapping_summary(m)
    lines = [f"# {MAPPING_FORMAT}"]
    lines += [f"# {h}" if h and not h.startswith("#") else h for h in header.splitlines()]
    lines.append(f"program {s['program']}")
    lines.append(f"initiation_interval {s['initiation_interval']}")
    lines.append(f"latency_cycles {s['latency_cycles']:g}")
    for nid, k, kind, name, r, c in s["units"]:
        lines.append(f"unit {nid} {k} {kind} {name or '-'} {r},{c}")
    for src, sc, dst, dc, static, path in s["wires"]:
        lines.append(f"wire {src} {sc} {dst} {dc} {static} {' '.join(_coord(p) for p in path)}")
    return "\n".join(lines) + "\n"


def parse_mapping(text: str) -> dict:
    lines = text.splitlines()
    if not lines or lines[0].strip() != f"# {MAPPING_FORMAT}":
        raise ValueError("not a mapping file (bad or missing version line)")
    out: dict = {"units": [], "wires": []}
    for ln in lines[1:]:
        if not ln.strip() or ln.startswith("#"):
            continue
        key, *rest = ln.split()
        if key == "program":
            out["program"] = rest[0]
        elif key == "initiation_interval":
            out["initiation_interval"] = int(rest[0])
        elif key == "latency_cycles":
            out["latency_cycles"] = float(rest[0])
        elif key == "unit":
            nid, k, kind, name, rc = rest
            r, c = rc.split(",")
            out["units"].append((int(nid), int(k), kind, "" if name == "-" else name, int(r), int(c)))
        elif key == "wire":
            src, sc, dst, dc, static, *path = rest
            pts = tuple(tuple(int(v) for v in p.split(",")) for p in path)
            out["wires"].append((int(src), int(sc), int(dst), int(dc), int(static), pts))
        else:
            raise ValueError(f"unknown mapping record {key!r}")
    return out


def format_report(r: PerfReport, header: str = "") -> str:
    lines = [f"# {REPORT_FORMAT}"]
    lines += [f"# {h}" if h and not h.startswith("#") else h for h in header.splitlines()]
    for k, v in r.to_dict().items():
        lines.append(f"{k} = {v:.6g}" if isinstance(v, float) else f"{k} = {v}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    lines = text.splitlines()
    if not lines or lines[0].strip() != f"# {REPORT_FORMAT}":
        raise ValueError("not a perf report (bad or missing version line)")
    out: dict = {}
    for ln in lines[1:]:
        if not ln.strip() or ln.startswith("#"):
            continue
        k, v = (x.strip() for x in ln.split("=", 1))
        if k == "program":
            out[k] = v
            continue
        try:
            out[k] = int(v)
        except ValueError:
            out[k] = float(v)
    return out
