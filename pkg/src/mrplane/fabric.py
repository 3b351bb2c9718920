"""Parameterized hardware model: grid configuration, unit cost, and a cycle simulator."""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from dataclasses import dataclass, field
from importlib import resources

from . import fixpoint as fx

BASELINE_AREA_MM2 = 300.0
BASELINE_PIPELINES = 4
POWER_PER_PIPELINE_W = 25.0

# Calibrated once against the single-CU perceptron (16 ns, 0.78 mm^2) and frozen.
# See tests/test_calibration.py for the recomputation.
MOVEMENT_CYCLES = 5.5
# each switch beyond the first adds a registered crossbar traversal
HOP_CYCLES = 2.0
LINK_COEFF_MM2 = 0.19865


class FabricError(Exception):
    pass


@dataclass(frozen=True)
class FabricConfig:
    rows: int = 8
    cols: int = 16
    lanes: int = 16
    stages: int = 2
    precision: fx.FixedFormat = fx.FIX8
    clock_ghz: float = 1.0
    mu_banks: int = 16
    mu_capacity: int = 4096
    # timing model
    movement_cycles: float = MOVEMENT_CYCLES
    hop_cycles: float = HOP_CYCLES
    lut_cycles: int = 4
    buffer_cycles: int = 1

    def __post_init__(self):
        for k in ("rows", "cols", "lanes", "stages", "mu_banks", "mu_capacity"):
            if getattr(self, k) < 1:
                raise FabricError(f"{k} must be >= 1")
        if self.clock_ghz <= 0:
            raise FabricError("clock_ghz must be positive")

    @property
    def reduce_cycles(self) -> int:
        return max(1, math.ceil(math.log2(self.lanes))) if self.lanes > 1 else 1

    def units(self) -> list[tuple[str, int, int]]:
        """All grid slots as (kind, row, col); CUs sit where row + col is even."""
        return [("cu" if (r + c) % 2 == 0 else "mu", r, c) for r in range(self.rows) for c in range(self.cols)]

    def count(self, kind: str) -> int:
        return sum(1 for k, _, _ in self.units() if k == kind)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["precision"] = self.precision.name
        return d

    def replace(self, **kw) -> "FabricConfig":
        return dataclasses.replace(self, **kw)


_INT_KEYS = {"rows", "cols", "lanes", "stages", "mu_banks", "mu_capacity", "lut_cycles", "buffer_cycles"}
_FLOAT_KEYS = {"clock_ghz", "movement_cycles", "hop_cycles"}


def config_from_dict(d: dict, base: FabricConfig | None = None) -> FabricConfig:
    kw = {}
    for k, v in d.items():
        if k in _INT_KEYS:
            kw[k] = int(v)
        elif k in _FLOAT_KEYS:
            kw[k] = float(v)
        elif k == "precision":
            kw[k] = v if isinstance(v, fx.FixedFormat) else fx.FixedFormat.parse(str(v))
        else:
            raise FabricError(f"unknown fabric key {k!r}")
    return dataclasses.replace(base or FabricConfig(), **kw)


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FabricError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path: str | os.PathLike) -> FabricConfig:
    with open(path) as f:
        return config_from_dict(parse_kv(f.read()))


def format_config(cfg: FabricConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())


def save_config(cfg: FabricConfig, path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        f.write(format_config(cfg))


def _load_fu_table(path=None) -> dict[str, tuple[float, float]]:
    if path is None:
        text = resources.files("mrplane").joinpath("data/fu_cost.csv").read_text()
    else:
        with open(path) as f:
            text = f.read()
    rows = csv.DictReader(line for line in text.splitlines() if not line.startswith("#"))
    return {r["precision"]: (float(r["area_um2"]), float(r["power_uw"])) for r in rows}


@dataclass(frozen=True)
class CostModel:
    fu_table: dict = field(default_factory=_load_fu_table)
    mu_area_mm2: float = 0.06
    link_coeff_mm2: float = LINK_COEFF_MM2
    baseline_area_mm2: float = BASELINE_AREA_MM2
    pipelines: int = BASELINE_PIPELINES
    power_per_pipeline_w: float = POWER_PER_PIPELINE_W

    @classmethod
    def from_file(cls, path, **kw) -> "CostModel":
        return cls(fu_table=_load_fu_table(path), **kw)

    def _entry(self, p) -> tuple[float, float]:
        name = p.name if isinstance(p, fx.FixedFormat) else str(p)
        name = name.split(".")[0]
        if name not in self.fu_table:
            raise FabricError(f"unsupported precision {name!r}")
        return self.fu_table[name]

    def fu_area(self, p) -> float:
        """Per-FU area in um^2."""
        return self._entry(p)[0]

    def fu_power(self, p) -> float:
        """Per-FU power in uW."""
        return self._entry(p)[1]

    def cu_area(self, lanes: int, stages: int, p) -> float:
        """CU area in mm^2."""
        return lanes * stages * self.fu_area(p) / 1e6

    def power_density(self, p) -> float:
        """mW per mm^2 of fabric at the given precision."""
        return 1e3 * self.fu_power(p) / self.fu_area(p)

    @property
    def baseline_power_mw(self) -> float:
        return self.pipelines * self.power_per_pipeline_w * 1e3


@dataclass(frozen=True)
class Cost:
    area_mm2: float
    power_mw: float
    overhead_area_pct: float
    overhead_power_pct: float


def fabric_cost(cfg: FabricConfig, used_cus: int, used_mus: int, used_links: int,
                cost: CostModel | None = None) -> Cost:
    cost = cost or CostModel()
    if used_cus > cfg.count("cu") or used_mus > cfg.count("mu"):
        raise FabricError(
            f"usage ({used_cus} CUs, {used_mus} MUs) exceeds the {cfg.rows}x{cfg.cols} grid")
    p = cfg.precision
    area = (used_cus * cost.cu_area(cfg.lanes, cfg.stages, p)
            + used_mus * cost.mu_area_mm2 + used_links * cost.link_coeff_mm2)
    # power tracks silicon area at the FU power density (mW per mm^2)
    power = area * cost.power_density(p)
    # one block is added to every pipeline
    n = cost.pipelines
    return Cost(area, power, 100.0 * n * area / cost.baseline_area_mm2,
                100.0 * n * power / cost.baseline_power_mw)
