"""Compile map-reduce programs onto the fabric and estimate their cost."""

from __future__ import annotations

from dataclasses import dataclass

from ..fabric import CostModel, FabricConfig
from ..frontend import TypedProgram, validate
from .build import lower, split, unroll
from .estimate import PerfReport, estimate
from .execute import Kernels, run_graph
from .graph import CompileError, DataflowGraph
from .place import Mapping, place_and_route
from .serialize import format_mapping, format_report, parse_mapping, parse_report


@dataclass
class Compiled:
    graph: DataflowGraph
    mapping: Mapping
    report: PerfReport


def compile_program(p, cfg: FabricConfig | None = None, unroll_factor: int | None = None,
                    cost: CostModel | None = None) -> Compiled:
    """lower -> unroll -> split -> place_and_route -> estimate."""
    cfg = cfg or FabricConfig()
    typed = p if isinstance(p, TypedProgram) else validate(p, cfg.mu_capacity)
    g = lower(typed, cfg)
    if unroll_factor is not None:
        g = unroll(g, unroll_factor)
    g = split(g, cfg)
    m = place_and_route(g, cfg)
    return Compiled(g, m, estimate(m, cfg, cost))


__all__ = [
    "CompileError", "Compiled", "DataflowGraph", "Kernels", "Mapping", "PerfReport",
    "compile_program", "estimate", "format_mapping", "format_report", "lower", "parse_mapping",
    "parse_report", "place_and_route", "run_graph", "split", "unroll",
]
