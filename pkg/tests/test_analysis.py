import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrplane import analysis as an
from mrplane.analysis import FlowModel, LatencyConstants
from mrplane.models import build_suite, get

LC = LatencyConstants()


# ---------------------------------------------------------------- flow cache

def test_flow_sizes_are_bounded_and_seeded():
    fm = FlowModel(n_flows=5000, rng_seed=4)
    s = an.flow_sizes(fm)
    assert len(s) == 5000 and s.min() >= 1 and s.max() <= 1_000_000
    assert np.array_equal(s, an.flow_sizes(FlowModel(n_flows=5000, rng_seed=4)))
    assert not np.array_equal(s, an.flow_sizes(FlowModel(n_flows=5000, rng_seed=5)))


def test_pareto_tail_matches_closed_form():
    # P(X >= k) = k^-shape for the untruncated law, floor keeps the integer thresholds
    s = an.flow_sizes(FlowModel(n_flows=200_000, rng_seed=1))
    for k in (2, 10, 100):
        assert np.mean(s >= k) == pytest.approx(k ** -1.2, rel=0.05)


def test_miss_rate_without_unstable_fields():
    fm = FlowModel(sizes=(1, 4, 5))
    assert an.cache_miss_rate(fm) == pytest.approx(3 / 10)
    assert an.cache_miss_rate(FlowModel(sizes=(1,) * 7, unstable_fields=3)) == 1.0
    assert an.cache_miss_rate(FlowModel(n_flows=0)) == 0.0


def test_zero_entropy_fields_never_miss():
    assert an.cache_miss_rate(FlowModel(sizes=(10, 10), unstable_fields=4, field_entropy_bits=0)) == 0.1


def test_flow_model_validation():
    with pytest.raises(ValueError):
        FlowModel(field_entropy_bits=-1)
    with pytest.raises(ValueError):
        FlowModel(sizes=(0,))
    with pytest.raises(ValueError):
        an.flow_sizes(FlowModel(flow_size_dist=("lognormal", {})))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 6), st.integers(0, 12))
def test_miss_rate_monotone_in_fields_and_entropy(seed, fields, bits):
    def rate(f, b):
        return an.cache_miss_rate(FlowModel(n_flows=300, unstable_fields=f, field_entropy_bits=b, rng_seed=seed))

    r = rate(fields, bits)
    assert rate(fields + 1, bits) >= r
    assert rate(fields, bits + 1) >= r
    assert 0 <= r <= 1


# ---------------------------------------------------------------- flow completion time

def test_latency_constants():
    assert LC.tx_ms == pytest.approx(1500 * 8 / 100e9 * 1e3)
    assert LC.infer_ms("gpu") == 1.15
    with pytest.raises(ValueError):
        LC.infer_ms("fpga")
    with pytest.raises(ValueError):
        LatencyConstants(rule_install_ms=0)


@pytest.mark.parametrize("size", [1, 2, 37])
def test_fct_closed_form_without_unstable_fields(size):
    fm = FlowModel(sizes=(size,))
    control = LC.cpu_infer_ms + LC.rule_install_ms
    base = LC.switch_base_latency_us * 1e-3
    want_cache = control + (size - 1) * base + size * LC.tx_ms
    want_dp = control + (size - 1) * (base + LC.dataplane_infer_ns * 1e-6) + size * LC.tx_ms
    assert an.fct_compare(fm, LC, "caching")[0] == pytest.approx(want_cache)
    assert an.fct_compare(fm, LC, "dataplane")[0] == pytest.approx(want_dp)


def test_fct_every_packet_missing():
    fm = FlowModel(sizes=(50,), unstable_fields=8, field_entropy_bits=32)
    control = LC.cpu_infer_ms + LC.rule_install_ms
    assert an.fct_compare(fm, LC, "caching")[0] == pytest.approx(50 * (control + LC.tx_ms))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 8), st.integers(0, 8), st.sampled_from(["cpu", "gpu", "tpu"]))
def test_dataplane_fct_ignores_unstable_fields(seed, f1, f2, accel):
    a = an.fct_compare(FlowModel(n_flows=100, unstable_fields=f1, rng_seed=seed), LC, "dataplane", accel)
    b = an.fct_compare(FlowModel(n_flows=100, unstable_fields=f2, rng_seed=seed), LC, "dataplane", accel)
    assert np.array_equal(a, b)


def test_fct_ratio_by_size():
    rows = an.fct_ratio_by_size([1, 10, 10_000])
    assert rows[0][3] == pytest.approx(1.0)
    ratios = [r[3] for r in rows]
    assert ratios == sorted(ratios)
    assert ratios[-1] > 1000
    with pytest.raises(ValueError):
        an.fct_compare(FlowModel(sizes=(1,)), LC, "magic")


# ---------------------------------------------------------------- report rows

def test_within():
    assert an.within(1.0, 1.0, 0)
    assert not an.within(1.001, 1.0, 0)
    assert an.within(1.25, 1.0, 0.25)
    assert not an.within(1.26, 1.0, 0.25)
    r = an.ReportRow("x", "b", "m", 10.0, 12.0, 0.1)
    assert not r.ok and r.deviation == pytest.approx(0.2)


@pytest.fixture(scope="module")
def rows():
    return an.report_tables(build_suite())


def test_report_table_ids(rows):
    assert {r.table for r in rows} == {"fu_cost", "apps", "micro", "unroll"}


def test_fu_cost_rows_exact(rows):
    fu = [r for r in rows if r.table == "fu_cost"]
    assert len(fu) == 7 and all(r.ok for r in fu)


def test_calibration_row_exact(rows):
    pr = {r.metric: r for r in rows if r.benchmark == "Percept" and r.table == "micro"}
    assert pr["latency_ns"].ok and pr["latency_ns"].tol == 0
    assert pr["area_mm2"].ok and pr["area_mm2"].tol == 0


def test_unroll_rows(rows):
    ur = {(r.benchmark, r.metric): r for r in rows if r.table == "unroll"}
    for u, rate in ((1, 1 / 8), (2, 1 / 4), (4, 1 / 2), (8, 1.0)):
        assert ur[(f"Conv1D@U{u}", "line_rate")].measured == pytest.approx(rate)
    assert ur[("Conv1D", "area_increasing_in_U")].ok


def test_parallel_compile_matches_serial():
    suite = [get("Percept"), get("Conv1D")]
    assert an.compile_suite(suite, jobs=2) == an.compile_suite(suite, jobs=1)


def test_empty_suite():
    assert an.report_tables([]) == []


def test_write_report(tmp_path, rows):
    paths = an.write_report(tmp_path, rows, "seed = 0")
    names = {p.name for p in paths}
    assert {"tables.csv", "tables.txt", "latency.png", "area.png", "unroll_area.png", "unroll_rate.png"} <= names
    for p in paths:
        assert p.exists() and p.stat().st_size > 0
    text = (tmp_path / "tables.csv").read_text().splitlines()
    assert text[0] == "# seed = 0"
    body = list(csv.DictReader(ln for ln in text if not ln.startswith("#")))
    assert len(body) == len(rows) and tuple(body[0]) == an.ROW_FIELDS
    assert (tmp_path / "tables.txt").read_text().startswith(f"# {an.TABLE_FORMAT}")
    # the header rides in a PNG text chunk
    png = (tmp_path / "latency.png").read_bytes()
    assert png.startswith(b"\x89PNG") and b"Description\x00seed = 0" in png


def test_curves(tmp_path):
    pts = an.cache_curve([0, 2], [4, 8], n_flows=50)
    assert len(pts) == 4 and {s for _, _, s in pts} == {"4 bits", "8 bits"}
    assert pts == an.cache_curve([0, 2], [4, 8], n_flows=50, jobs=2)
    f = an.fct_curve([1, 100])
    assert [s for _, _, s in f] == ["caching", "dataplane", "ratio"] * 2
    an.write_xy_csv(tmp_path / "c.csv", pts, "seed = 0")
    assert (tmp_path / "c.csv").read_text().splitlines()[1] == "x,y,series"
    an.plot_xy(tmp_path / "c.png", pts, "fields", "miss rate")
    assert (tmp_path / "c.png").stat().st_size > 0
