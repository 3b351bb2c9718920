"""Real-valued reference semantics with a propagated quantization error bound.

Every value is a pair ``(x, e)``: the real result and a bound on how far the
fixed-point interpreter's result may sit from it. Real values saturate at the
format's range like the fixed path does; clamping is 1-Lipschitz, so the
bounds survive it.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

from .. import fixpoint as fx
from .ast import BinOp, Call, Index, MapExpr, Num, ReduceExpr, Var
from .interp import eval_index
from .validate import TypedProgram

Pair = tuple[float, float]


def _lipschitz(fn, lo: float, hi: float, samples: int = 4096) -> float:
    xs = [lo + (hi - lo) * k / samples for k in range(samples + 1)]
    ys = [fn(x) for x in xs]
    step = (hi - lo) / samples
    # slack for curvature between samples
    return 1.05 * max(abs(b - a) / step for a, b in zip(ys, ys[1:]))


class ReferenceInterpreter:
    def __init__(self, typed, weights: Mapping[str, Sequence[float]]):
        self.p = typed.program if isinstance(typed, TypedProgram) else typed
        self.fmt = self.p.format
        self.ulp = 1.0 / self.fmt.scale
        self.lo = self.fmt.min_raw * self.ulp
        self.hi = self.fmt.max_raw * self.ulp
        self.weights = {}
        for w in self.p.weights:
            flat = [float(v) for v in _flatten(weights[w.name])]
            self.weights[w.name] = (w.shape, [self.leaf(v) for v in flat])
        self.luts = {}
        self._lip: dict[str, float] = {}
        for lt in self.p.luts:
            self.luts[lt.name] = (fx.LUT_FUNCTIONS[lt.fn], lt.lo, lt.hi)

    def clamp(self, x: float) -> float:
        return min(self.hi, max(self.lo, x))

    def leaf(self, v: float) -> Pair:
        # quantization of an exact input costs at most half an ulp
        return self.clamp(v), self.ulp / 2

    def run(self, inputs: Mapping[str, Sequence[float]]) -> dict[str, list[Pair]]:
        env: dict = {}
        for d in self.p.inputs:
            env[d.name] = [self.leaf(float(v)) for v in inputs[d.name]]
        outputs = {d.name for d in self.p.outputs}
        result = {}
        for a in self.p.body:
            v = self.eval(a.expr, env, {})
            if a.name in outputs:
                result[a.name] = v if isinstance(v, list) else [v]
            env[a.name] = v
        return result

    def eval(self, e, env, loops):
        if isinstance(e, Num):
            q = fx.quantize_raw(e.value, self.fmt) * self.ulp
            return self.clamp(e.value), abs(q - self.clamp(e.value))
        if isinstance(e, Var):
            if e.name in loops:
                return self.clamp(float(loops[e.name])), 0.0
            if e.name in env:
                return env[e.name]
            return list(self.weights[e.name][1])
        if isinstance(e, Index):
            idx = [eval_index(i, loops) for i in e.indices]
            if e.name in self.weights and e.name not in env:
                shape, data = self.weights[e.name]
                off = 0
                for k, d in zip(idx, shape):
                    off = off * d + k
                return data[off]
            return env[e.name][idx[0]]
        if isinstance(e, BinOp):
            return self.binop(e.op, self.eval(e.lhs, env, loops), self.eval(e.rhs, env, loops))
        if isinstance(e, Call):
            return self.call(e.fn, [self.eval(x, env, loops) for x in e.args])
        if isinstance(e, MapExpr):
            out = []
            for i in range(e.trip.count):
                inner_loops = {**loops, e.var: i}
                inner_env = dict(env)
                for name, bx in e.body.bindings:
                    inner_env[name] = self.eval(bx, inner_env, inner_loops)
                out.append(self.eval(e.body.result, inner_env, inner_loops))
            return out
        if isinstance(e, ReduceExpr):
            return self.reduce(self.eval(e.vec, env, loops), e.op)
        raise TypeError(f"cannot evaluate {e!r}")

    def binop(self, op: str, a: Pair, b: Pair) -> Pair:
        (x, ex), (y, ey) = a, b
        if op == "add":
            return self.clamp(x + y), ex + ey
        if op == "sub":
            return self.clamp(x - y), ex + ey
        return self.clamp(x * y), abs(x) * ey + abs(y) * ex + ex * ey + self.ulp / 2

    def call(self, fn: str, args: list[Pair]) -> Pair:
        if fn == "relu":
            x, ex = args[0]
            return max(x, 0.0), ex
        if fn == "leaky_relu":
            x, ex = args[0]
            return (x if x >= 0 else x / 8), ex + self.ulp / 2
        if fn in ("max", "min"):
            pick = max if fn == "max" else min
            return pick(args[0][0], args[1][0]), max(args[0][1], args[1][1])
        if fn == "select":
            (c, ec), (a, ea), (b, eb) = args
            if abs(c) <= ec:
                # the branch taken may differ between the two semantics
                return (a if c > 0 else b), max(ea, eb) + abs(a - b)
            return (a, ea) if c > 0 else (b, eb)
        return self.lookup(fn, args[0])

    def lookup(self, name: str, arg: Pair) -> Pair:
        fn, lo, hi = self.luts.get(name) or (fx.LUT_FUNCTIONS[name], *fx.LUT_DOMAINS[name])
        x, ex = arg
        y = self.clamp(fn(x)) if not math.isinf(fn(x)) else self.hi
        inside = min(hi, max(lo, x))
        if name not in self._lip:
            self._lip[name] = _lipschitz(lambda t: self.clamp(fn(t)), lo, hi)
        lip = self._lip[name]
        width = (hi - lo) / fx.LUT_SIZE
        # table inputs are clamped to the domain, then sampled at bin centres
        edge = abs(self.clamp(fn(inside)) - y)
        return y, lip * (ex + width) + self.ulp / 2 + edge

    def reduce(self, vec: list[Pair], op: str) -> Pair:
        if op == "add":
            return self.clamp(sum(x for x, _ in vec)), sum(e for _, e in vec)
        if op in ("max", "min"):
            pick = max if op == "max" else min
            return pick(x for x, _ in vec), max(e for _, e in vec)
        acc = vec[0]
        for v in vec[1:]:
            x, ex = acc
            y, ey = v
            acc = (x * y, abs(x) * ey + abs(y) * ex + ex * ey)
        return self.clamp(acc[0]), acc[1] + self.ulp / 2


def _flatten(x):
    if isinstance(x, (list, tuple)):
        for v in x:
            yield from _flatten(v)
    else:
        yield x


def interpret_real(typed, weights: Mapping, inputs: Mapping) -> dict[str, list[Pair]]:
    """Evaluate with real arithmetic; returns ``(value, error bound)`` per output element."""
    return ReferenceInterpreter(typed, weights).run(inputs)
