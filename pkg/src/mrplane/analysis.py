"""Flow-cache and flow-completion-time studies, and benchmark report tables."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fabric import CostModel, FabricConfig

TABLE_FORMAT = "mrplane-table 1"


# ---------------------------------------------------------------- flow cache

@dataclass(frozen=True)
class FlowModel:
    # (name, params); only a bounded Pareto is built in
    flow_size_dist: tuple = ("pareto", {"shape": 1.2, "min": 1, "cap": 1_000_000})
    n_flows: int = 1000
    unstable_fields: int = 0
    field_entropy_bits: float = 16.0
    rng_seed: int = 0
    # fixed sizes override the distribution when given
    sizes: tuple | None = None

    def __post_init__(self):
        if self.field_entropy_bits < 0:
            raise ValueError("field_entropy_bits must be >= 0")
        if self.unstable_fields < 0 or self.n_flows < 0:
            raise ValueError("unstable_fields and n_flows must be >= 0")
        if self.sizes is not None and any(s < 1 for s in self.sizes):
            raise ValueError("flow sizes must be at least one packet")


def flow_sizes(fm: FlowModel) -> np.ndarray:
    if fm.sizes is not None:
        return np.asarray(fm.sizes, dtype=np.int64)
    name, params = fm.flow_size_dist
    if name != "pareto":
        raise ValueError(f"unknown flow size distribution {name!r}")
    rng = np.random.default_rng([fm.rng_seed, 0])
    u = rng.random(fm.n_flows)
    x = params.get("min", 1) * (1.0 - u) ** (-1.0 / params["shape"])
    return np.minimum(np.floor(x), params.get("cap", 1_000_000)).astype(np.int64)


def _field_values(fm: FlowModel, n_packets: int) -> np.ndarray:
    """Per-packet values of the unstable fields, one independent stream per field.

    Adding a field or raising the entropy by whole bits only refines keys under
    the same seed, which is what the paired-seed monotonicity checks rely on.
    """
    n_vals = max(1, int(round(2.0 ** fm.field_entropy_bits)))
    cols = []
    for j in range(fm.unstable_fields):
        u = np.random.default_rng([fm.rng_seed, 1, j]).random(n_packets)
        cols.append(np.floor(u * n_vals).astype(np.int64))
    return np.stack(cols, axis=1) if cols else np.zeros((n_packets, 0), dtype=np.int64)


def first_seen(fm: FlowModel) -> tuple[np.ndarray, np.ndarray]:
    """Flow index of every packet and whether its cache key is new (a miss)."""
    sizes = flow_sizes(fm)
    flow = np.repeat(np.arange(len(sizes), dtype=np.int64), sizes)
    keys = np.concatenate([flow[:, None], _field_values(fm, len(flow))], axis=1)
    miss = np.zeros(len(flow), dtype=bool)
    if len(flow):
        _, idx = np.unique(keys, axis=0, return_index=True)
        miss[idx] = True
    return flow, miss


def cache_miss_rate(fm: FlowModel) -> float:
    """Misses per packet for an infinite flow cache keyed on five-tuple plus unstable fields."""
    flow, miss = first_seen(fm)
    return float(miss.mean()) if len(flow) else 0.0


# ---------------------------------------------------------------- flow completion time

@dataclass(frozen=True)
class LatencyConstants:
    rule_install_ms: float = 3.0
    cpu_infer_ms: float = 0.67
    gpu_infer_ms: float = 1.15
    tpu_infer_ms: float = 3.51
    switch_base_latency_us: float = 1.0
    dataplane_infer_ns: float = 188.0
    # serialization of one packet on the ingress link: 1500 B at 100 Gb/s
    link_gbps: float = 100.0
    packet_bytes: int = 1500

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v <= 0:
                raise ValueError(f"{k} must be positive")

    def infer_ms(self, accel: str) -> float:
        try:
            return {"cpu": self.cpu_infer_ms, "gpu": self.gpu_infer_ms, "tpu": self.tpu_infer_ms}[accel]
        except KeyError:
            raise ValueError(f"unknown accelerator {accel!r}") from None

    @property
    def tx_ms(self) -> float:
        return self.packet_bytes * 8 / (self.link_gbps * 1e9) * 1e3


def fct_compare(fm: FlowModel, lc: LatencyConstants = LatencyConstants(), scheme: str = "dataplane",
                accel: str = "cpu") -> np.ndarray:
    """Per-flow completion time in ms at negligible load.

    Packets of a flow are handled one after another; a flow finishes when its
    last packet clears the switch. The first packet always visits the control
    plane. After that the data-plane scheme pays switch latency plus inference,
    while the caching scheme pays the control-plane round trip on every miss.
    """
    if scheme not in ("dataplane", "caching"):
        raise ValueError(f"unknown scheme {scheme!r}")
    control = lc.infer_ms(accel) + lc.rule_install_ms
    base = lc.switch_base_latency_us * 1e-3
    flow, miss = first_seen(fm)
    first = np.ones(len(flow), dtype=bool)
    first[1:] = flow[1:] != flow[:-1]
    if scheme == "dataplane":
        per = np.where(first, control, base + lc.dataplane_infer_ns * 1e-6)
    else:
        per = np.where(first | miss, control, base)
    per = per + lc.tx_ms
    return np.bincount(flow, weights=per, minlength=len(flow_sizes(fm)))


def fct_ratio_by_size(sizes: Sequence[int], unstable_fields: int = 8, entropy_bits: float = 16.0,
                      seed: int = 0, lc: LatencyConstants = LatencyConstants(),
                      accel: str = "cpu") -> list[tuple[int, float, float, float]]:
    """(size, caching FCT, data-plane FCT, ratio) for single flows of the given sizes."""
    out = []
    for s in sizes:
        fm = FlowModel(n_flows=1, unstable_fields=unstable_fields, field_entropy_bits=entropy_bits,
                       rng_seed=seed, sizes=(int(s),))
        c = float(fct_compare(fm, lc, "caching", accel)[0])
        d = float(fct_compare(fm, lc, "dataplane", accel)[0])
        out.append((int(s), c, d, c / d))
    return out


# ---------------------------------------------------------------- report tables

# per-FU area (um^2) and power (uW) at 16 lanes and 2 stages
FU_TARGETS = {"fix8": (3877, 223), "fix16": (8108, 393), "fix32": (20203, 759)}
CU_AREA_TARGET = 0.124
# reference power and overhead per application: mW, +area %, +power %
APP_EXTRA = {
    "KMeans": (142, 3.3, 0.56), "SVM": (263, 6.1, 1.1), "DNN": (506, 11.7, 2.0),
    "LSTM": (1018, 23.6, 4.1),
}
CALIBRATION = "Percept"


@dataclass
class ReportRow:
    table: str
    benchmark: str
    metric: str
    expected: float
    measured: float
    tol: float  # relative; 0 means exact (to float rounding)
    note: str = ""
    ok: bool = field(init=False)

    def __post_init__(self):
        self.ok = within(self.measured, self.expected, self.tol)

    @property
    def deviation(self) -> float:
        return (self.measured - self.expected) / self.expected if self.expected else 0.0


def within(measured: float, expected: float, tol: float) -> bool:
    if tol == 0:
        return math.isclose(measured, expected, rel_tol=1e-9, abs_tol=1e-12)
    return abs(measured - expected) <= tol * abs(expected) + 1e-12


def _compile_one(args):
    # module-level so process pools can pickle it
    name, unroll, cfg = args
    from .compiler import compile_program
    from .models import get

    spec = get(name)
    return (name, unroll), compile_program(spec.program(cfg.mu_capacity), cfg, unroll).report


def compile_suite(suite, cfg: FabricConfig | None = None, jobs: int = 1) -> dict:
    """PerfReport for every benchmark at its default schedule and each listed unroll factor."""
    cfg = cfg or FabricConfig()
    work = []
    for spec in suite:
        work.append((spec.name, None, cfg))
        work += [(spec.name, u, cfg) for u in sorted(spec.unroll)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            done = list(ex.map(_compile_one, work))
    else:
        done = [_compile_one(w) for w in work]
    return dict(done)


def report_tables(suite, reports: dict | None = None, cfg: FabricConfig | None = None,
                  cost: CostModel | None = None, jobs: int = 1) -> list[ReportRow]:
    """Rows comparing the cost model and compiled benchmarks against reference figures."""
    suite = list(suite)
    if not suite:
        return []
    cfg = cfg or FabricConfig()
    cost = cost or CostModel()
    reports = reports if reports is not None else compile_suite(suite, cfg, jobs)
    rows: list[ReportRow] = []
    for p, (a, w) in FU_TARGETS.items():
        rows.append(ReportRow("fu_cost", p, "fu_area_um2", a, cost.fu_area(p), 0))
        rows.append(ReportRow("fu_cost", p, "fu_power_uw", w, cost.fu_power(p), 0))
    # reference value is given to three decimals: 32 x 3877 um^2 = 0.124064 mm^2
    rows.append(ReportRow("fu_cost", "fix8", "cu_area_mm2", CU_AREA_TARGET, round(cost.cu_area(16, 2, "fix8"), 3), 0))

    apps = [s for s in suite if s.kind == "app"]
    lat_sum = [0.0, 0.0]
    for s in apps:
        r = reports[(s.name, None)]
        if s.ii_range:
            lo, hi = s.ii_range
            ii_ok = lo <= r.initiation_interval <= hi
            rows.append(ReportRow("apps", s.name, "initiation_interval", (lo + hi) / 2, r.initiation_interval,
                                  (hi - lo) / (lo + hi), note=f"accepted range {lo}-{hi}"))
            rows[-1].ok = ii_ok
        else:
            rows.append(ReportRow("apps", s.name, "throughput_gpkts", s.line_rate * cfg.clock_ghz,
                                  r.throughput_gpkts, 0))
        rows.append(ReportRow("apps", s.name, "latency_ns", s.latency_ns, r.latency_ns, s.latency_tol))
        rows.append(ReportRow("apps", s.name, "area_mm2", s.area_mm2, r.area_mm2, s.area_tol))
        if s.name in APP_EXTRA:
            mw, da, dp = APP_EXTRA[s.name]
            rows.append(ReportRow("apps", s.name, "power_mw", mw, r.power_mw, s.area_tol))
            rows.append(ReportRow("apps", s.name, "overhead_area_pct", da, r.overhead_area_pct, s.area_tol))
            rows.append(ReportRow("apps", s.name, "overhead_power_pct", dp, r.overhead_power_pct, s.area_tol))
        lat_sum[0] += s.latency_ns
        lat_sum[1] += r.latency_ns
    if apps:
        rows.append(ReportRow("apps", "mean", "latency_ns", lat_sum[0] / len(apps), lat_sum[1] / len(apps),
                              apps[0].latency_tol))

    for s in suite:
        if s.kind != "micro":
            continue
        r = reports[(s.name, None)]
        calib = s.name == CALIBRATION
        note = "calibration point" if calib else ""
        rows.append(ReportRow("micro", s.name, "latency_ns", s.latency_ns, r.latency_ns,
                              0 if calib else s.latency_tol, note))
        # reference areas carry two decimals
        area = round(r.area_mm2, 2) if calib else r.area_mm2
        rows.append(ReportRow("micro", s.name, "area_mm2", s.area_mm2, area, 0 if calib else s.area_tol, note))

    for s in suite:
        if not s.unroll:
            continue
        prev = None
        mono = True
        for u in sorted(s.unroll):
            rate, area = s.unroll[u]
            r = reports[(s.name, u)]
            rows.append(ReportRow("unroll", f"{s.name}@U{u}", "line_rate", rate,
                                  r.throughput_gpkts / cfg.clock_ghz, 0))
            rows.append(ReportRow("unroll", f"{s.name}@U{u}", "area_mm2", area, r.area_mm2, s.area_tol))
            if prev is not None and r.area_mm2 <= prev:
                mono = False
            prev = r.area_mm2
        if len(s.unroll) > 1:
            rows.append(ReportRow("unroll", s.name, "area_increasing_in_U", 1.0, float(mono), 0))
    return rows


# ---------------------------------------------------------------- sweeps and output

def _miss_point(args):
    fields, bits, n_flows, seed = args
    fm = FlowModel(n_flows=n_flows, unstable_fields=fields, field_entropy_bits=bits, rng_seed=seed)
    return fields, bits, cache_miss_rate(fm)


def cache_curve(fields: Sequence[int], entropies: Sequence[float], n_flows: int = 1000, seed: int = 0,
                jobs: int = 1) -> list[tuple]:
    """Plot-ready (x = unstable fields, y = miss rate, series = entropy) points."""
    work = [(f, e, n_flows, seed) for e in entropies for f in fields]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            pts = list(ex.map(_miss_point, work))
    else:
        pts = [_miss_point(w) for w in work]
    return [(f, m, f"{e:g} bits") for f, e, m in pts]


def fct_curve(sizes: Sequence[int], unstable_fields: int = 8, entropy_bits: float = 16.0, seed: int = 0,
              lc: LatencyConstants = LatencyConstants(), accel: str = "cpu") -> list[tuple]:
    """Plot-ready FCT points: (x = flow size, y = FCT ms or ratio, series)."""
    out = []
    for s, c, d, r in fct_ratio_by_size(sizes, unstable_fields, entropy_bits, seed, lc, accel):
        out += [(s, c, "caching"), (s, d, "dataplane"), (s, r, "ratio")]
    return out


def write_xy_csv(path, points: Sequence[tuple], header: str = "") -> None:
    with open(path, "w", newline="") as fh:
        for h in header.splitlines():
            fh.write((h if h.startswith("#") else f"# {h}") + "\n")
        w = csv.writer(fh)
        w.writerow(["x", "y", "series"])
        for x, y, s in points:
            w.writerow([x, f"{y:.9g}", s])


ROW_FIELDS = ("table", "benchmark", "metric", "expected", "measured", "deviation", "tol", "ok", "note")


def write_rows_csv(path, rows: Sequence[ReportRow], header: str = "") -> None:
    with open(path, "w", newline="") as fh:
        for h in header.splitlines():
            fh.write((h if h.startswith("#") else f"# {h}") + "\n")
        w = csv.writer(fh)
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow([r.table, r.benchmark, r.metric, f"{r.expected:.6g}", f"{r.measured:.6g}",
                        f"{r.deviation:+.4f}", r.tol, "PASS" if r.ok else "FAIL", r.note])


def format_rows(rows: Sequence[ReportRow], header: str = "") -> str:
    """Versioned fixed-width text rendering of report rows."""
    lines = [f"# {TABLE_FORMAT}"]
    lines += [h if h.startswith("#") else f"# {h}" for h in header.splitlines()]
    fmt = "{:<8} {:<14} {:<22} {:>12} {:>12} {:>8} {:>5}  {}"
    lines.append(fmt.format("table", "benchmark", "metric", "expected", "measured", "dev", "ok", "note"))
    for r in rows:
        lines.append(fmt.format(r.table, r.benchmark, r.metric, f"{r.expected:.6g}", f"{r.measured:.6g}",
                                f"{100 * r.deviation:+.1f}%", "PASS" if r.ok else "FAIL", r.note).rstrip())
    return "\n".join(lines) + "\n"


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_xy(path, points: Sequence[tuple], xlabel: str, ylabel: str, logx: bool = False,
            logy: bool = False, title: str = "", header: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    series: dict = {}
    for x, y, s in points:
        series.setdefault(s, ([], []))
        series[s][0].append(x)
        series[s][1].append(y)
    for s, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", label=str(s))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path, header)


def _save(fig, path, header: str) -> None:
    # the reproducibility header travels in the PNG text chunk
    fig.tight_layout()
    fig.savefig(path, metadata={"Description": header} if header else None)
    _pyplot().close(fig)


def plot_rows(path, rows: Sequence[ReportRow], metric: str, tables: Sequence[str], header: str = "") -> None:
    """Grouped bars of expected against measured values for one metric."""
    sel = [r for r in rows if r.metric == metric and r.table in tables]
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(sel) + 2), 3.5))
    xs = np.arange(len(sel))
    ax.bar(xs - 0.2, [r.expected for r in sel], 0.4, label="reference")
    ax.bar(xs + 0.2, [r.measured for r in sel], 0.4, label="model",
           color=["tab:green" if r.ok else "tab:red" for r in sel])
    ax.set_xticks(xs)
    ax.set_xticklabels([r.benchmark for r in sel], rotation=45, ha="right", fontsize=8)
    ax.set_ylabel(metric)
    ax.legend(fontsize=8)
    _save(fig, path, header)


def write_report(out_dir, rows: Sequence[ReportRow], header: str = "") -> list[Path]:
    """CSV, text table and one figure per compared metric; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "tables.csv", out_dir / "tables.txt"]
    write_rows_csv(paths[0], rows, header)
    paths[1].write_text(format_rows(rows, header))
    if not rows:
        return paths
    for metric, tables, name in (("latency_ns", ("apps", "micro"), "latency.png"),
                                 ("area_mm2", ("apps", "micro"), "area.png"),
                                 ("area_mm2", ("unroll",), "unroll_area.png"),
                                 ("line_rate", ("unroll",), "unroll_rate.png")):
        if any(r.metric == metric and r.table in tables for r in rows):
            plot_rows(out_dir / name, rows, metric, tables, header)
            paths.append(out_dir / name)
    return paths


__all__ = [
    "FlowModel", "LatencyConstants", "ReportRow", "TABLE_FORMAT", "cache_curve", "cache_miss_rate",
    "compile_suite", "fct_compare", "fct_curve", "fct_ratio_by_size", "first_seen", "flow_sizes",
    "format_rows", "plot_rows", "plot_xy", "report_tables", "within", "write_report", "write_rows_csv",
    "write_xy_csv",
]
