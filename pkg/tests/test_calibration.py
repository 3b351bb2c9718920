"""Recompute the two frozen timing and area constants from the single-CU perceptron.

The perceptron occupies one CU and one MU, so its latency is affine in the
per-route movement delay and its area is affine in the per-link area. Solving
both from the calibration targets (16 ns, 0.78 mm^2) must give the constants
the cost model ships with.
"""

import pytest

from mrplane import fabric
from mrplane.compiler import compile_program
from mrplane.fabric import CostModel, FabricConfig
from mrplane.models import get

LATENCY_NS = 16.0
AREA_MM2 = 0.78


def latency_at(mv: float) -> float:
    cfg = FabricConfig(movement_cycles=mv)
    return compile_program(get("Percept").program(), cfg).report.latency_ns


def test_movement_delay_recomputed():
    a, b = latency_at(0.0), latency_at(10.0)
    slope = (b - a) / 10.0
    assert slope > 0
    mv = (LATENCY_NS - a) / slope
    assert mv == pytest.approx(fabric.MOVEMENT_CYCLES)
    assert latency_at(mv) == pytest.approx(LATENCY_NS)


def test_link_area_recomputed():
    r = compile_program(get("Percept").program()).report
    cm = CostModel()
    fixed = r.cu_count * cm.cu_area(16, 2, "fix8") + r.mu_count * cm.mu_area_mm2
    coeff = (AREA_MM2 - fixed) / r.link_count
    # frozen to five decimals
    assert round(coeff, 5) == fabric.LINK_COEFF_MM2
    assert r.area_mm2 == pytest.approx(AREA_MM2, abs=5e-5)


def test_calibration_uses_one_of_each_unit():
    r = compile_program(get("Percept").program()).report
    assert (r.cu_count, r.mu_count) == (1, 1)
