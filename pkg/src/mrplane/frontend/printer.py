"""Pretty-printer producing source that re-parses to an equal Program."""

from __future__ import annotations

from .ast import BinOp, Block, Call, Index, MapExpr, Num, Program, ReduceExpr, TripCount, Var

_SYM = {"add": "+", "sub": "-", "mul": "*"}


def _num(v: float) -> str:
    return repr(float(v))


def _trip(t: TripCount) -> str:
    s = t.text or str(t.count)
    return f"{s} par {t.par}" if t.par is not None else s


def format_expr(e, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(e, Num):
        return _num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Index):
        return f"{e.name}[{', '.join(format_expr(i) for i in e.indices)}]"
    if isinstance(e, BinOp):
        return f"({format_expr(e.lhs, indent)} {_SYM[e.op]} {format_expr(e.rhs, indent)})"
    if isinstance(e, Call):
        return f"{e.fn}({', '.join(format_expr(a, indent) for a in e.args)})"
    if isinstance(e, MapExpr):
        return f"Map({_trip(e.trip)}) {{ {e.var} =>\n{_block(e.body, indent + 1)}\n{pad}}}"
    if isinstance(e, ReduceExpr):
        if e.op in ("max", "min"):
            comb = f"{e.op}({e.x}, {e.y})"
        else:
            comb = f"{e.x} {_SYM[e.op]} {e.y}"
        return f"Reduce({format_expr(e.vec, indent)}) {{ ({e.x}, {e.y}) => {comb} }}"
    raise TypeError(f"not an expression: {e!r}")


def _block(b: Block, indent: int) -> str:
    pad = "  " * indent
    lines = [f"{pad}{n} = {format_expr(x, indent)}" for n, x in b.bindings]
    lines.append(pad + format_expr(b.result, indent))
    return "\n".join(lines)


def _decl(kind: str, d) -> str:
    return f"{kind} metadata {d.name}: {d.format}[{', '.join(map(str, d.shape))}]"


def format_program(p: Program) -> str:
    params = [_decl("in", d) for d in p.inputs] + [_decl("out", d) for d in p.outputs]
    out = [f"Control {p.name}({', '.join(params)}) {{"]
    for w in p.weights:
        dims = ", ".join(map(str, w.shape))
        out.append(f'  weight {w.name}: {w.format}[{dims}] = loadModelFromFile("{w.source}")')
    for lt in p.luts:
        out.append(f"  lut {lt.name} = {lt.fn}({_num(lt.lo)}, {_num(lt.hi)})")
    for a in p.body:
        out.append(f"  {a.name} = {format_expr(a.expr, 1)}")
    out.append("}")
    return "\n".join(out) + "\n"
