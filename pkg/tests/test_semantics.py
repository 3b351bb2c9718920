"""Compiled and simulated programs compute exactly what the interpreter computes."""

from hypothesis import HealthCheck, given, settings, strategies as st

from mrplane.compiler import compile_program
from mrplane.frontend import interpret, parse_program, validate
from mrplane.sim import FabricSim

from strategies import input_vectors, programs


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(programs(max_rows=16), st.data())
def test_fabric_matches_interpreter(pw, data):
    src, weights, widths = pw
    typed = validate(parse_program(src))
    c = compile_program(typed)
    xs = data.draw(input_vectors(widths, 3))
    em = FabricSim(c.mapping, weights).run(xs).emitted
    assert sorted(seq for _, seq, _ in em) == [0, 1, 2]
    for _, seq, out in em:
        assert out == interpret(typed, weights, xs[seq]), src
