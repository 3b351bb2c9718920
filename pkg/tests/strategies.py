"""Hypothesis strategies shared by the test modules."""

from __future__ import annotations

from hypothesis import strategies as st

from mrplane import fixpoint as fx

RAW8 = st.integers(fx.FIX8.min_raw, fx.FIX8.max_raw)
LITERALS = [0.0, 0.5, 1.0, -1.0, 1.5, -0.25, 2.0, 0.0625, 3.75]


class _Gen:
    """Builds one random, valid program as source text plus its raw weights."""

    def __init__(self, draw, max_width: int, max_rows: int):
        self.draw = draw
        self.max_width = max_width
        self.max_rows = max_rows
        self.weights: dict[str, list] = {}
        self.wdecls: list[str] = []
        self.luts: set[str] = set()
        self.vecs: dict[str, int] = {}
        self.scalars: list[str] = []
        self.body: list[str] = []

    def weight(self, shape: tuple) -> str:
        name = f"W{len(self.weights)}"
        size = 1
        for d in shape:
            size *= d
        flat = self.draw(st.lists(st.integers(-40, 40), min_size=size, max_size=size))
        if len(shape) == 2:
            data = [flat[r * shape[1]:(r + 1) * shape[1]] for r in range(shape[0])]
        else:
            data = flat
        self.weights[name] = data
        dims = ", ".join(str(d) for d in shape)
        self.wdecls.append(f'weight {name}: fix8[{dims}] = loadModelFromFile("{name}.csv")')
        return name

    def leaf(self, length: int, var: str) -> str:
        same = [v for v, n in self.vecs.items() if n == length]
        kinds = ["vec"] * 3 + ["lit", "weight"] + (["scalar"] if self.scalars else [])
        kind = self.draw(st.sampled_from(kinds))
        if kind == "vec":
            return f"{self.draw(st.sampled_from(same))}[{var}]"
        if kind == "lit":
            return repr(self.draw(st.sampled_from(LITERALS)))
        if kind == "weight":
            return f"{self.weight((length,))}[{var}]"
        return self.draw(st.sampled_from(self.scalars))

    def elem(self, length: int, var: str, depth: int) -> str:
        if depth == 0 or self.draw(st.integers(0, 3)) == 0:
            return self.leaf(length, var)
        op = self.draw(st.sampled_from(
            ["+", "-", "*", "max", "min", "relu", "leaky_relu", "select", "sigmoid", "tanh"]))
        a = self.elem(length, var, depth - 1)
        if op in ("relu", "leaky_relu"):
            return f"{op}({a})"
        if op in ("sigmoid", "tanh"):
            self.luts.add(op)
            return f"{op}({a})"
        b = self.elem(length, var, depth - 1)
        if op in ("max", "min"):
            return f"{op}({a}, {b})"
        if op == "select":
            return f"select({a}, {b}, {self.elem(length, var, 0)})"
        return f"({a} {op} {b})"

    def combine(self) -> str:
        op = self.draw(st.sampled_from(["a + b", "a + b", "max(a, b)", "min(a, b)", "a * b"]))
        return f"{{ (a, b) => {op} }}"

    def trip(self, n: int) -> str:
        if n > 1 and self.draw(st.booleans()):
            return f"{n} par {self.draw(st.integers(1, n))}"
        return str(n)

    def statement(self, k: int) -> str:
        name = f"t{k}"
        kinds = ["elem", "dot", "matvec"] + (["reduce"] if any(n > 1 for n in self.vecs.values()) else [])
        kind = self.draw(st.sampled_from(kinds))
        if kind == "elem":
            n = self.draw(st.sampled_from(sorted(set(self.vecs.values()))))
            e = self.elem(n, "i", 3)
            self.body.append(f"{name} = Map({self.trip(n)}){{ i => {e} }}")
            self.vecs[name] = n
        elif kind == "dot":
            n = self.draw(st.sampled_from(sorted(set(self.vecs.values()))))
            e = self.elem(n, "j", 2)
            self.body.append(f"{name} = Reduce(Map({n}){{ j => {e} }}){self.combine()}")
            self.scalars.append(name)
        elif kind == "matvec":
            src = self.draw(st.sampled_from(sorted(self.vecs)))
            n = self.vecs[src]
            rows = self.draw(st.integers(1, self.max_rows))
            w = self.weight((rows, n))
            dot = f"Reduce(Map({n}){{ j => {w}[i, j] * {src}[j] }}){{ (a, b) => a + b }}"
            if self.draw(st.booleans()):
                dot = f"{dot} + {self.weight((rows,))}[i]"
            if self.draw(st.booleans()):
                dot = f"{self.draw(st.sampled_from(['relu', 'leaky_relu']))}({dot})"
            self.body.append(f"{name} = Map({self.trip(rows)}){{ i => {dot} }}")
            self.vecs[name] = rows
        else:
            src = self.draw(st.sampled_from(sorted(v for v, n in self.vecs.items() if n > 1)))
            self.body.append(f"{name} = Reduce({src}){self.combine()}")
            self.scalars.append(name)
        return name

    def build(self) -> tuple[str, dict, dict]:
        n = self.draw(st.integers(1, self.max_width))
        self.vecs["x"] = n
        inputs = {"x": n}
        if self.draw(st.booleans()):
            m = self.draw(st.sampled_from([n, self.draw(st.integers(1, self.max_width))]))
            self.vecs["z"] = m
            inputs["z"] = m
        stmts = [self.statement(k) for k in range(self.draw(st.integers(1, 3)))]
        outs = [stmts[-1]] + ([stmts[0]] if len(stmts) > 1 and self.draw(st.booleans()) else [])
        params = [f"in metadata {k}: fix8[{v}]" for k, v in inputs.items()]
        for o in outs:
            params.append(f"out metadata {o}: fix8[{1 if o in self.scalars else self.vecs[o]}]")
        lines = [f"Control Rand({', '.join(params)}) {{"]
        lines += [f"  {d}" for d in self.wdecls]
        lines += [f"  lut {f} = {f}(-8, 8)" for f in sorted(self.luts)]
        lines += [f"  {b}" for b in self.body]
        lines.append("}")
        return "\n".join(lines) + "\n", self.weights, inputs


@st.composite
def programs(draw, max_width: int = 32, max_rows: int = 12):
    """(source, raw weights, input widths) for a random valid program."""
    return _Gen(draw, max_width, max_rows).build()


def input_vectors(widths: dict, count: int):
    return st.lists(
        st.fixed_dictionaries({k: st.lists(RAW8, min_size=n, max_size=n) for k, n in widths.items()}),
        min_size=count, max_size=count)
