"""Benchmark suite: application models and microbenchmarks as DSL sources with weights."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .. import fixpoint as fx
from ..frontend import TypedProgram, load_weights, parse_file, validate

ASSET_VERSION = "v1"
LATENCY_TOL = 0.25
AREA_TOL = 0.30


def assets_dir(version: str = ASSET_VERSION) -> Path:
    return Path(str(resources.files(__package__) / "assets" / version))


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    kind: str  # "app" | "micro"
    source: Path
    weights_dir: Path
    arity: dict  # input name -> width
    latency_ns: float
    area_mm2: float
    line_rate: float | None = 1.0  # None: a range of initiation intervals is accepted instead
    ii_range: tuple[int, int] | None = None
    # unroll factor -> expected (line-rate fraction, area)
    unroll: dict = field(default_factory=dict)
    latency_tol: float = LATENCY_TOL
    area_tol: float = AREA_TOL

    def program(self, mu_capacity: int | None = None) -> TypedProgram:
        p = parse_file(self.source)
        return validate(p) if mu_capacity is None else validate(p, mu_capacity)

    def weights(self, weights_dir: str | os.PathLike | None = None) -> dict:
        return load_weights(self.program().program, weights_dir or self.weights_dir)


_APPS = [
    # name, file, latency ns, area mm2, line rate, ii range
    ("KMeans", "kmeans.mr", 76, 2.48, 1.0, None),
    ("SVM", "svm.mr", 68, 4.59, 1.0, None),
    ("DNN", "dnn.mr", 188, 8.80, 1.0, None),
    ("LSTM", "indigo.mr", 380, 17.73, None, (12, 13)),
]

_MICRO = [
    ("Conv1D", "conv1d.mr", 47, 4.93, {1: (1 / 8, 0.78), 2: (1 / 4, 1.30), 4: (1 / 2, 2.34), 8: (1.0, 4.93)}),
    ("Percept", "percept.mr", 16, 0.78, {1: (1.0, 0.78)}),
    ("SVMLin", "svm_lin.mr", 30, 1.82, {1: (1 / 2, 1.30), 2: (1.0, 1.82)}),
    ("LSTMLin", "lstm_lin.mr", 29, 2.34, {}),
    ("GRULin", "gru_lin.mr", 29, 2.34, {}),
    ("LeakyReLU", "leaky_relu.mr", 21, 0.78, {}),
    ("ReLU", "relu.mr", 20, 0.52, {}),
    ("SigmoidLUT", "sigmoid_lut.mr", 27, 0.52, {}),
    ("TanhLUT", "tanh_lut.mr", 27, 0.52, {}),
]


def _arity(path: Path) -> dict:
    p = parse_file(path)
    return {d.name: d.shape[0] for d in p.inputs}


def build_suite(version: str = ASSET_VERSION) -> list[BenchmarkSpec]:
    base = assets_dir(version)
    out = []
    for name, fname, lat, area, rate, ii in _APPS:
        out.append(BenchmarkSpec(name, "app", base / fname, base, _arity(base / fname),
                                 lat, area, rate, ii))
    for name, fname, lat, area, unroll in _MICRO:
        out.append(BenchmarkSpec(name, "micro", base / fname, base, _arity(base / fname),
                                 lat, area, 1.0, None, dict(unroll)))
    return out


def get(name: str, version: str = ASSET_VERSION) -> BenchmarkSpec:
    for spec in build_suite(version):
        if spec.name.lower() == name.lower():
            return spec
    raise KeyError(f"unknown benchmark {name!r}")


def random_weights(spec: BenchmarkSpec, seed: int, out_dir: str | os.PathLike,
                   mode: str = "uniform") -> list[Path]:
    """Write reproducible weight CSVs for every tensor of ``spec``.

    ``uniform`` draws from [-1, 1]; ``zeros`` writes all-zero tensors.
    """
    if mode not in ("uniform", "zeros"):
        raise ValueError(f"unknown weight mode {mode!r}")
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for w in spec.program().program.weights:
        shape = w.shape if len(w.shape) > 1 else (1, w.shape[0])
        if mode == "zeros":
            data = np.zeros(shape)
        else:
            data = rng.uniform(-1.0, 1.0, size=shape)
        path = out_dir / os.path.basename(w.source)
        fx.write_weights_csv(path, data.reshape(shape[0], -1).tolist())
        paths.append(path)
    return paths


def random_inputs(spec: BenchmarkSpec, rng: np.random.Generator, lo: float = -1.0,
                  hi: float = 1.0) -> dict[str, list[float]]:
    return {k: rng.uniform(lo, hi, size=n).tolist() for k, n in spec.arity.items()}


__all__ = [
    "AREA_TOL", "ASSET_VERSION", "BenchmarkSpec", "LATENCY_TOL", "assets_dir", "build_suite", "get",
    "random_inputs", "random_weights",
]
