"""Reference interpreter: evaluates a program directly from its syntax tree.

This is the oracle the compiled fabric mapping is checked against, so it
deliberately shares nothing with the compiler beyond the fixed-point kernels.
"""

from __future__ import annotations

import os
from functools import lru_cache
from typing import Mapping, Sequence

from .. import fixpoint as fx
from .ast import BinOp, Call, Index, MapExpr, Num, Program, ReduceExpr, Var
from .validate import TypedProgram, eval_index


@lru_cache(maxsize=None)
def _cached_lut(fn: str, lo: float, hi: float, fmt: fx.FixedFormat) -> fx.Lut:
    return fx.build_lut(fx.LUT_FUNCTIONS[fn], lo, hi, fmt, fn)


def resolve_lut(p: Program, name: str) -> fx.Lut:
    for lt in p.luts:
        if lt.name == name:
            return _cached_lut(lt.fn, lt.lo, lt.hi, p.format)
    lo, hi = fx.LUT_DOMAINS[name]
    return _cached_lut(name, lo, hi, p.format)


class Tensor:
    """Row-major raw storage for a weight tensor."""

    __slots__ = ("shape", "data")

    def __init__(self, shape: Sequence[int], data: Sequence[int]):
        self.shape = tuple(shape)
        self.data = tuple(data)
        size = 1
        for d in self.shape:
            size *= d
        if len(self.data) != size:
            raise ValueError(f"tensor of shape {list(self.shape)} needs {size} values, got {len(self.data)}")

    def offset(self, idx: Sequence[int]) -> int:
        off = 0
        for k, d in zip(idx, self.shape):
            off = off * d + k
        return off

    def __getitem__(self, idx):
        return self.data[self.offset(idx)]


def load_weights(p: Program, base_dir: str | os.PathLike = ".") -> dict[str, Tensor]:
    out = {}
    for w in p.weights:
        path = w.source if os.path.isabs(w.source) else os.path.join(base_dir, w.source)
        rows = fx.load_weights_csv(path, w.format)
        out[w.name] = Tensor(w.shape, [v for r in rows for v in r])
    return out


def as_tensors(p: Program, weights: Mapping) -> dict[str, Tensor]:
    out = {}
    for w in p.weights:
        t = weights[w.name]
        if not isinstance(t, Tensor):
            flat = list(_flatten(t))
            t = Tensor(w.shape, flat)
        out[w.name] = t
    return out


def _flatten(x):
    if isinstance(x, (list, tuple)):
        for y in x:
            yield from _flatten(y)
    else:
        yield int(x)


class Interpreter:
    def __init__(self, typed: TypedProgram, weights: Mapping):
        self.p = typed.program if isinstance(typed, TypedProgram) else typed
        self.fmt = self.p.format
        self.weights = as_tensors(self.p, weights)
        self.luts = {}

    def lut(self, name: str) -> fx.Lut:
        if name not in self.luts:
            self.luts[name] = resolve_lut(self.p, name)
        return self.luts[name]

    def run(self, inputs: Mapping[str, Sequence[int]]) -> dict[str, list[int]]:
        env: dict = {}
        for d in self.p.inputs:
            vec = [int(v) for v in inputs[d.name]]
            if len(vec) != d.shape[0]:
                raise ValueError(f"input {d.name!r} expects {d.shape[0]} values, got {len(vec)}")
            env[d.name] = vec
        outputs = {d.name for d in self.p.outputs}
        result = {}
        for a in self.p.body:
            v = self.eval(a.expr, env, {})
            if a.name in outputs:
                result[a.name] = v if isinstance(v, list) else [v]
            env[a.name] = v
        return result

    def eval(self, e, env, loops):
        fmt = self.fmt
        if isinstance(e, Num):
            return fx.quantize_raw(e.value, fmt)
        if isinstance(e, Var):
            if e.name in loops:
                return fx.quantize_raw(loops[e.name], fmt)
            if e.name in env:
                return env[e.name]
            return list(self.weights[e.name].data)
        if isinstance(e, Index):
            idx = [eval_index(i, loops) for i in e.indices]
            if e.name in self.weights and e.name not in env:
                return self.weights[e.name][idx]
            return env[e.name][idx[0]]
        if isinstance(e, BinOp):
            a = self.eval(e.lhs, env, loops)
            b = self.eval(e.rhs, env, loops)
            if e.op == "add":
                return fx.add_raw(a, b, fmt)
            if e.op == "sub":
                return fx.sub_raw(a, b, fmt)
            return fx.mul_raw(a, b, fmt)
        if isinstance(e, Call):
            args = [self.eval(x, env, loops) for x in e.args]
            if e.fn == "relu":
                return fx.relu_raw(args[0], fmt)
            if e.fn == "leaky_relu":
                return fx.leaky_relu_raw(args[0], fmt)
            if e.fn == "max":
                return max(args)
            if e.fn == "min":
                return min(args)
            if e.fn == "select":
                return fx.select_raw(*args, fmt)
            return self.lut(e.fn).lookup_raw(args[0])
        if isinstance(e, MapExpr):
            out = []
            for i in range(e.trip.count):
                inner_loops = dict(loops)
                inner_loops[e.var] = i
                inner_env = dict(env)
                for name, bx in e.body.bindings:
                    inner_env[name] = self.eval(bx, inner_env, inner_loops)
                out.append(self.eval(e.body.result, inner_env, inner_loops))
            return out
        if isinstance(e, ReduceExpr):
            return fx.reduce_raw(self.eval(e.vec, env, loops), e.op, fmt)
        raise TypeError(f"cannot evaluate {e!r}")


def interpret(typed, weights: Mapping, inputs: Mapping[str, Sequence[int]]) -> dict[str, list[int]]:
    return Interpreter(typed, weights).run(inputs)
