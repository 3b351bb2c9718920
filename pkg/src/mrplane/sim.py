"""Cycle-stepped execution of a placed mapping.

Each accepted input vector becomes a token that flows through the placed
units. A unit's result for a token becomes visible on the cycle its data has
arrived and its pipeline has drained, using the same wire and unit delays as the
static latency model, so the two agree by construction. Values are computed with
the compiler's node kernels, which share the interpreter's fixed-point
arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping as TMapping, Sequence

from .compiler.estimate import timing
from .compiler.execute import Kernels
from .compiler.place import Mapping


class SimulationError(RuntimeError):
    pass


@dataclass
class Token:
    seq: int
    start: int
    inputs: dict
    values: dict = field(default_factory=dict)  # node id -> NodeValue
    step: int = 0  # next entry of the simulator's ready schedule


@dataclass
class FabricState:
    cycle: int = 0
    next_accept: int = 0
    accepted: int = 0
    inflight: list = field(default_factory=list)
    emitted: list = field(default_factory=list)  # (cycle, seq, {output: raws})

    def snapshot(self) -> tuple:
        """Hashable view used to compare runs cycle by cycle."""
        fly = tuple((t.seq, t.start, tuple(sorted(t.values))) for t in self.inflight)
        out = tuple((c, s, tuple((k, tuple(v)) for k, v in sorted(o.items()))) for c, s, o in self.emitted)
        return (self.cycle, self.next_accept, self.accepted, fly, out)


class FabricSim:
    def __init__(self, mapping: Mapping, weights: TMapping):
        self.m = mapping
        g = mapping.graph
        if not mapping.arrival:
            timing(mapping)
        self.kernels = Kernels(g, weights)
        self.order = g.topo()
        self.preds = {n: g.preds(n) for n in self.order}
        # cycle offset after injection at which each node's result is visible
        self.ready: dict[int, int] = {}
        for n in self.order:
            times = [t for (nid, _), t in mapping.arrival.items() if nid == n]
            self.ready[n] = math.ceil(max(times, default=0.0))
        # nodes grouped by ready offset, topological order kept within a group
        self.schedule: list[tuple[int, list[int]]] = []
        for off in sorted(set(self.ready.values())):
            self.schedule.append((off, [n for n in self.order if self.ready[n] == off]))
        self.outputs = [n for n in self.order if g.nodes[n].kind == "output"]
        self.latency = max((self.ready[n] for n in self.outputs), default=0)
        self.ii = mapping.initiation_interval

    def new_state(self) -> FabricState:
        return FabricState()

    def offer(self, state: FabricState, inputs: TMapping[str, Sequence[int]]) -> bool:
        """Present an input vector at the current cycle; False if the fabric is not ready."""
        if state.cycle < state.next_accept:
            return False
        state.inflight.append(Token(state.accepted, state.cycle, dict(inputs)))
        state.accepted += 1
        state.next_accept = state.cycle + self.ii
        return True

    def execute_cycle(self, state: FabricState) -> FabricState:
        """Advance every unit one clock and retire tokens whose outputs are complete."""
        g = self.m.graph
        still = []
        for tok in state.inflight:
            age = state.cycle - tok.start
            while tok.step < len(self.schedule) and self.schedule[tok.step][0] <= age:
                for n in self.schedule[tok.step][1]:
                    preds = [tok.values[p] for p in self.preds[n] if p in tok.values]
                    if len(preds) != len(self.preds[n]):
                        raise SimulationError(f"node {n} ready before its inputs")
                    tok.values[n] = self.kernels.source(g.nodes[n], preds, tok.inputs)
                tok.step += 1
            if tok.step == len(self.schedule):
                out = {g.nodes[n].name: list(tok.values[n].named) for n in self.outputs}
                state.emitted.append((state.cycle, tok.seq, out))
            else:
                still.append(tok)
        state.inflight = still
        state.cycle += 1
        return state

    def advance_to(self, state: FabricState, cycle: int) -> FabricState:
        """Step until ``cycle``; idle stretches with nothing in flight are skipped."""
        while state.cycle < cycle:
            if not state.inflight:
                state.cycle = cycle
                break
            self.execute_cycle(state)
        return state

    def drain(self, state: FabricState) -> FabricState:
        while state.inflight:
            self.execute_cycle(state)
        return state

    def run(self, stream: Iterable[TMapping[str, Sequence[int]]], max_cycles: int | None = None) -> FabricState:
        """Feed vectors as fast as the initiation interval allows and drain the pipeline."""
        state = self.new_state()
        pending = list(stream)
        limit = max_cycles if max_cycles is not None else (len(pending) + 1) * self.ii + self.latency + 2
        k = 0
        while (k < len(pending) or state.inflight) and state.cycle <= limit:
            if k < len(pending) and self.offer(state, pending[k]):
                k += 1
            self.execute_cycle(state)
        if k < len(pending) or state.inflight:
            raise SimulationError("simulation did not drain within the cycle limit")
        return state


def execute_cycle(sim: FabricSim, state: FabricState) -> FabricState:
    return sim.execute_cycle(state)


def simulate(mapping: Mapping, weights: TMapping, stream: Iterable) -> list[tuple[int, int, dict]]:
    """Convenience wrapper: returns (cycle, sequence number, outputs) per input."""
    return FabricSim(mapping, weights).run(stream).emitted


__all__ = ["FabricSim", "FabricState", "SimulationError", "Token", "execute_cycle", "simulate"]
