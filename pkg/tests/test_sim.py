import math

import numpy as np
import pytest

from mrplane.compiler import compile_program
from mrplane.frontend import interpret
from mrplane.models import build_suite
from mrplane.sim import FabricSim, SimulationError, simulate

SUITE = {s.name: s for s in build_suite()}


def stream(spec, n, seed=0):
    rng = np.random.default_rng(seed)
    return [{k: [int(v) for v in rng.integers(-128, 128, w)] for k, w in spec.arity.items()} for _ in range(n)]


@pytest.fixture(scope="module")
def built():
    out = {}
    for name in ("Percept", "KMeans", "DNN", "LSTM", "Conv1D", "SigmoidLUT"):
        s = SUITE[name]
        out[name] = (s, s.program(), s.weights(), compile_program(s.program()))
    return out


@pytest.mark.parametrize("name", ["Percept", "KMeans", "DNN", "LSTM", "Conv1D", "SigmoidLUT"])
def test_outputs_match_interpreter(built, name):
    spec, typed, w, c = built[name]
    xs = stream(spec, 5)
    em = simulate(c.mapping, w, xs)
    assert [seq for _, seq, _ in em] == list(range(5))
    for _, seq, out in em:
        assert out == interpret(typed, w, xs[seq])


@pytest.mark.parametrize("name", ["Percept", "DNN", "LSTM"])
def test_latency_and_spacing_agree_with_static_model(built, name):
    spec, _, w, c = built[name]
    sim = FabricSim(c.mapping, w)
    assert sim.latency == math.ceil(c.report.latency_cycles)
    em = sim.run(stream(spec, 6)).emitted
    cycles = [cyc for cyc, _, _ in em]
    assert cycles[0] == sim.latency
    assert all(b - a == c.report.initiation_interval for a, b in zip(cycles, cycles[1:]))


def test_offer_respects_initiation_interval(built):
    spec, _, w, c = built["LSTM"]
    sim = FabricSim(c.mapping, w)
    st = sim.new_state()
    x = stream(spec, 1)[0]
    assert sim.offer(st, x)
    for _ in range(sim.ii - 1):
        sim.execute_cycle(st)
        assert not sim.offer(st, x)
    sim.execute_cycle(st)
    assert sim.offer(st, x)


def test_advance_skips_idle_time(built):
    spec, _, w, c = built["Percept"]
    sim = FabricSim(c.mapping, w)
    st = sim.advance_to(sim.new_state(), 10**9)
    assert st.cycle == 10**9 and not st.emitted
    assert sim.offer(st, stream(spec, 1)[0])
    sim.drain(st)
    assert st.emitted[0][0] == 10**9 + sim.latency


def test_runs_are_cycle_identical(built):
    spec, _, w, c = built["KMeans"]
    xs = stream(spec, 4, seed=3)

    def trace():
        sim = FabricSim(c.mapping, w)
        st = sim.new_state()
        snaps, k = [], 0
        while k < len(xs) or st.inflight:
            if k < len(xs) and sim.offer(st, xs[k]):
                k += 1
            sim.execute_cycle(st)
            snaps.append(st.snapshot())
        return snaps

    assert trace() == trace()


def test_cycle_limit(built):
    spec, _, w, c = built["DNN"]
    with pytest.raises(SimulationError, match="drain"):
        FabricSim(c.mapping, w).run(stream(spec, 3), max_cycles=5)


def test_empty_stream(built):
    _, _, w, c = built["Percept"]
    assert simulate(c.mapping, w, []) == []
