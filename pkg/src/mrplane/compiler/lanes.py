"""Per-lane straight-line code.

Every CU executes the same instruction sequence on all of its lanes, so the
body of a Map (or the element function feeding a Reduce) is flattened into a
three-address program. Leaves name where an operand comes from; interior
instructions are the closed set of element ops.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

from .. import fixpoint as fx
from ..frontend.ast import BinOp, Call, Index, Num, Var
from ..frontend.validate import eval_index

LEAVES = ("read", "weight", "const", "loop", "acc")
ALU_OPS = ("add", "sub", "mul", "max", "min", "select", "relu", "leaky_relu")


@dataclass(frozen=True)
class LaneProgram:
    # each instr is (op, *args); args of ALU ops are earlier instr ids
    instrs: tuple
    result: int

    def ops(self) -> list[int]:
        return [k for k, ins in enumerate(self.instrs) if ins[0] not in LEAVES]

    def leaves(self, ids=None) -> list[int]:
        ids = range(len(self.instrs)) if ids is None else ids
        return [k for k in ids if self.instrs[k][0] in LEAVES]

    def args(self, k: int) -> tuple[int, ...]:
        ins = self.instrs[k]
        if ins[0] in LEAVES:
            return ()
        if ins[0] == "lut":
            return (ins[2],)
        return tuple(ins[1:])

    def luts(self) -> list[int]:
        return [k for k, ins in enumerate(self.instrs) if ins[0] == "lut"]

    def reads(self) -> set[str]:
        return {ins[1] for ins in self.instrs if ins[0] == "read"}

    def weights(self) -> set[str]:
        return {ins[1] for ins in self.instrs if ins[0] == "weight"}

    def uses_constants(self) -> bool:
        for ins in self.instrs:
            if ins[0] == "loop" or ins[0] == "leaky_relu":
                return True
            if ins[0] == "const" and ins[1] != 0:
                return True
        return False

    def is_pure_read(self) -> bool:
        return self.instrs[self.result][0] in LEAVES


class _Builder:
    def __init__(self, fmt, weights: set, loops: set, subst: Callable | None):
        self.fmt = fmt
        self.weights = weights
        self.loops = loops
        self.subst = subst
        self.instrs: list = []
        self.memo: dict = {}

    def emit(self, ins) -> int:
        if ins not in self.memo:
            self.memo[ins] = len(self.instrs)
            self.instrs.append(ins)
        return self.memo[ins]

    def build(self, e) -> int:
        if self.subst is not None:
            k = self.subst(self, e)
            if k is not None:
                return k
        if isinstance(e, Num):
            return self.emit(("const", fx.quantize_raw(e.value, self.fmt)))
        if isinstance(e, Var):
            if e.name in self.loops:
                return self.emit(("loop", e.name))
            return self.emit(("read", e.name, ()))
        if isinstance(e, Index):
            kind = "weight" if e.name in self.weights else "read"
            return self.emit((kind, e.name, tuple(e.indices)))
        if isinstance(e, BinOp):
            return self.emit((e.op, self.build(e.lhs), self.build(e.rhs)))
        if isinstance(e, Call):
            args = tuple(self.build(a) for a in e.args)
            if e.fn in ALU_OPS:
                return self.emit((e.fn, *args))
            return self.emit(("lut", e.fn, args[0]))
        raise TypeError(f"not an element expression: {type(e).__name__}")


def build_lane_program(e, fmt, weights: set, loops: set, subst=None) -> LaneProgram:
    """Flatten a scalar expression.

    `subst(builder, e)` may claim a subexpression by returning an instr id,
    which is how the compiler splices in reduction results.
    """
    b = _Builder(fmt, weights, loops, subst)
    r = b.build(e)
    return LaneProgram(tuple(b.instrs), r)


@dataclass
class LaneContext:
    """Operand sources for one lane at one loop point."""
    fmt: fx.FixedFormat
    loops: Mapping[str, int]
    read: Callable[[str, tuple], int]
    weight: Callable[[str, tuple], int]
    lut: Callable[[str], fx.Lut]
    acc: int | None = None


def eval_instr(ins, vals: Mapping[int, int], ctx: LaneContext) -> int:
    op = ins[0]
    fmt = ctx.fmt
    if op == "const":
        return ins[1]
    if op == "loop":
        return fx.quantize_raw(ctx.loops[ins[1]], fmt)
    if op in ("read", "weight"):
        idx = tuple(eval_index(i, ctx.loops) for i in ins[2])
        return ctx.read(ins[1], idx) if op == "read" else ctx.weight(ins[1], idx)
    if op == "acc":
        return ctx.acc
    if op == "lut":
        return ctx.lut(ins[1]).lookup_raw(vals[ins[2]])
    a = [vals[k] for k in ins[1:]]
    if op == "add":
        return fx.add_raw(a[0], a[1], fmt)
    if op == "sub":
        return fx.sub_raw(a[0], a[1], fmt)
    if op == "mul":
        return fx.mul_raw(a[0], a[1], fmt)
    if op == "max":
        return max(a)
    if op == "min":
        return min(a)
    if op == "select":
        return fx.select_raw(a[0], a[1], a[2], fmt)
    if op == "relu":
        return fx.relu_raw(a[0], fmt)
    if op == "leaky_relu":
        return fx.leaky_relu_raw(a[0], fmt)
    raise ValueError(f"unknown lane op {op!r}")


def run_slice(prog: LaneProgram, ids, vals: dict[int, int], ctx: LaneContext) -> dict[int, int]:
    """Execute the given instrs (in program order), extending `vals` in place."""
    for k in sorted(ids):
        if k not in vals:
            vals[k] = eval_instr(prog.instrs[k], vals, ctx)
    return vals


def schedule(prog: LaneProgram) -> tuple[dict[int, int], dict[int, int]]:
    """Assign each instr a phase and an in-phase ALU level.

    A LUT lookup happens in a memory unit, so its result belongs to the next
    phase. Leaves have level 0; an ALU op sits one level after its latest
    same-phase operand.
    """
    phase: dict[int, int] = {}
    level: dict[int, int] = {}
    for k, ins in enumerate(prog.instrs):
        if ins[0] in LEAVES:
            phase[k], level[k] = 0, 0
            continue
        args = prog.args(k)
        ph = max(phase[a] for a in args)
        if ins[0] == "lut":
            phase[k], level[k] = ph + 1, 0
            continue
        lv = 1 + max((level[a] for a in args if phase[a] == ph), default=0)
        phase[k], level[k] = ph, lv
    return phase, level
