"""Command-line entry point: compile, simulate, analyze, report.

Every run writes into a run directory holding its artifacts and a
``manifest.json``; every artifact starts with a header giving the resolved
configuration and seed.

Exit codes: 0 ok, 1 usage, 2 validation or compile error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__
from .fabric import FabricError, FabricConfig, load_config, parse_kv
from .fixpoint import FixedPointError
from .frontend import FrontendError
from .compiler.graph import CompileError

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3
MANIFEST_FORMAT = "mrplane-manifest 1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# defaults for every option a config file may set; flags > file > these
DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "out": None,
    "fabric": "default",
    "unroll": None,
    "weights": None,
    "trace": None,
    "packets": 10000,
    "flows": 64,
    "gap_ns": 1,
    "bypass": False,
    "acl": None,
    "hysteresis": 0.0,
    "timeout": 1,
    "floor": 0.0,
    "window": 1024,
    "threshold": 0.5,
    "score_index": 0,
    "base_latency_ns": 1000.0,
    "fields": "0..8",
    "entropy": "4,8,16",
    "n_flows": 1000,
    "sizes": "1,10,100,1000,10000,100000",
    "accel": "cpu",
    "unstable": 8,
    "entropy_bits": 16.0,
}
_COMMON = ("seed", "jobs", "out")
_MODEL = ("program", "fabric", "unroll", "weights")
_STUDY = ("fabric", "fields", "entropy", "n_flows", "sizes", "accel", "unstable", "entropy_bits")
# keys recorded for each command; others are dropped from the resolved config
RELEVANT = {
    "compile": _COMMON + _MODEL,
    "simulate": _COMMON + _MODEL + ("trace", "packets", "flows", "gap_ns", "bypass", "acl", "hysteresis",
                                    "timeout", "floor", "window", "threshold", "score_index",
                                    "base_latency_ns"),
    "analyze": _COMMON + ("kind",) + _STUDY,
    "report": _COMMON + _STUDY,
}
_INT = {"seed", "jobs", "packets", "flows", "gap_ns", "timeout", "window", "score_index", "n_flows", "unstable",
        "unroll"}
_FLOAT = {"hysteresis", "floor", "threshold", "base_latency_ns", "entropy_bits"}
_BOOL = {"bypass"}


def _coerce(key: str, v):
    if v is None or not isinstance(v, str):
        return v
    if key in _INT:
        return int(v)
    if key in _FLOAT:
        return float(v)
    if key in _BOOL:
        return v.strip().lower() in ("1", "true", "yes", "on")
    return v


def int_range(text: str) -> list[int]:
    """``0..8`` (inclusive) or a comma list."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            return list(range(int(a), int(b) + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad integer range {text!r}") from None


def float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--jobs", type=int, default=None, help="worker processes for independent work")
    common.add_argument("--out", default=None, help="run directory (default: runs/<command>-<id>)")

    p = _Parser(prog="mrplane", description="Map-reduce inference block for switch data planes.")
    p.add_argument("--version", action="version", version=f"mrplane {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    fab = _Parser(add_help=False)
    fab.add_argument("--fabric", default=None, help="'default' or a key = value fabric config file")
    fab.add_argument("--unroll", type=int, default=None, help="outer-loop unroll factor")
    fab.add_argument("--weights", default=None, help="weight directory (default: beside the program)")

    c = sub.add_parser("compile", parents=[common, fab], help="compile a program and estimate its cost")
    c.add_argument("program", help="source path or benchmark name")

    s = sub.add_parser("simulate", parents=[common, fab], help="run a packet trace through the pipeline")
    s.add_argument("program", help="source path or benchmark name")
    s.add_argument("--trace", default=None, help="packet trace; a synthetic one is generated otherwise")
    s.add_argument("--packets", type=int, default=None, help="synthetic trace length")
    s.add_argument("--flows", type=int, default=None, help="flows in the synthetic trace")
    s.add_argument("--gap-ns", dest="gap_ns", type=int, default=None, help="synthetic inter-arrival gap")
    s.add_argument("--bypass", action="store_const", const=True, default=None, help="skip inference")
    s.add_argument("--acl", default=None, help="ACL file, one field=value/mask entry per line")
    s.add_argument("--hysteresis", type=float, default=None)
    s.add_argument("--timeout", type=int, default=None, help="minimum packets per decision")
    s.add_argument("--floor", type=float, default=None, help="per-flow minimum bandwidth fraction")
    s.add_argument("--window", type=int, default=None, help="departures per bandwidth window")
    s.add_argument("--threshold", type=float, default=None)
    s.add_argument("--score-index", dest="score_index", type=int, default=None)
    s.add_argument("--base-latency-ns", dest="base_latency_ns", type=float, default=None)

    a = sub.add_parser("analyze", parents=[common], help="cache, fct or tables study")
    a.add_argument("kind", choices=("cache", "fct", "tables"))
    a.add_argument("--fields", default=None, help="unstable field counts, e.g. 0..8")
    a.add_argument("--entropy", default=None, help="entropy bits per field, comma list")
    a.add_argument("--n-flows", dest="n_flows", type=int, default=None)
    a.add_argument("--sizes", default=None, help="flow sizes in packets for the fct study")
    a.add_argument("--accel", default=None, choices=("cpu", "gpu", "tpu"))
    a.add_argument("--unstable", type=int, default=None, help="unstable fields for the fct study")
    a.add_argument("--entropy-bits", dest="entropy_bits", type=float, default=None)
    a.add_argument("--fabric", default=None)

    r = sub.add_parser("report", parents=[common], help="all studies with figures and CSV")
    r.add_argument("--fabric", default=None)
    r.add_argument("--n-flows", dest="n_flows", type=int, default=None)
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags, in increasing precedence."""
    cfg = {k: v for k, v in DEFAULTS.items()}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        for k, v in parse_kv(path.read_text()).items():
            k = k.replace("-", "_")
            if k not in DEFAULTS:
                raise UsageError(f"{path}: unknown key {k!r}")
            cfg[k] = _coerce(k, v)
    for k, v in vars(args).items():
        if k in ("config", "command") or v is None:
            continue
        cfg[k] = v
    if cfg["jobs"] < 1:
        raise UsageError("--jobs must be at least 1")
    keep = RELEVANT[args.command]
    cfg = {k: cfg.get(k) for k in keep}
    cfg["command"] = args.command
    return cfg


# ---------------------------------------------------------------- run directory

class Run:
    """Run directory with a reproducibility header and a manifest of artifacts."""

    def __init__(self, cfg: dict, extra: dict | None = None):
        self.cfg = cfg
        self.extra = extra or {}
        key = json.dumps({k: v for k, v in cfg.items() if k != "out"}, sort_keys=True, default=str)
        self.run_id = hashlib.sha256(key.encode()).hexdigest()[:10]
        self.dir = Path(cfg["out"] or Path("runs") / f"{cfg['command']}-{self.run_id}")
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    @property
    def header(self) -> str:
        lines = [f"mrplane {__version__} {self.cfg['command']}",
                 f"seed = {self.cfg['seed']}",
                 "config = " + json.dumps(self.cfg, sort_keys=True, default=str)]
        for k, v in self.extra.items():
            lines.append(f"{k} = " + json.dumps(v, sort_keys=True, default=str))
        return "\n".join(f"# {ln}" for ln in lines)

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def write_text(self, name: str, body: str) -> Path:
        p = self.path(name)
        p.write_text(body)
        return p

    def write_json(self, name: str, obj: dict) -> Path:
        doc = {"header": self.header.replace("# ", "").splitlines(), **obj}
        return self.write_text(name, json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")

    def finish(self, code: int) -> Path:
        files = []
        for p in dict.fromkeys(self.files):
            if p.exists():
                files.append({"path": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
        manifest = {
            "format": MANIFEST_FORMAT,
            "version": __version__,
            "command": self.cfg["command"],
            "seed": self.cfg["seed"],
            "config": self.cfg,
            **self.extra,
            "argv": sys.argv[1:],
            "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "exit_code": code,
            "files": files,
        }
        p = self.dir / "manifest.json"
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        return p


# ---------------------------------------------------------------- helpers

def fabric_config(name: str | None) -> FabricConfig:
    if name in (None, "default"):
        return FabricConfig()
    path = Path(name)
    if not path.is_file():
        raise UsageError(f"fabric config not found: {path}")
    return load_config(path)


def program_path(arg: str) -> Path:
    """A path, an asset file name such as ``assets/percept.mr``, or a benchmark name."""
    from .models import assets_dir, get

    p = Path(arg)
    if p.is_file():
        return p
    cand = assets_dir() / p.name
    if cand.is_file():
        return cand
    try:
        return get(arg).source
    except KeyError:
        raise UsageError(f"no such program file or benchmark: {arg}") from None


def load_model(cfg: dict):
    from .compiler import compile_program
    from .frontend import parse_file, validate

    fcfg = fabric_config(cfg["fabric"])
    path = program_path(cfg["program"])
    typed = validate(parse_file(path), fcfg.mu_capacity)
    compiled = compile_program(typed, fcfg, cfg["unroll"])
    wdir = Path(cfg["weights"]) if cfg["weights"] else path.parent
    if cfg["weights"] and not wdir.is_dir():
        raise UsageError(f"weight directory not found: {wdir}")
    return fcfg, path, typed, compiled, wdir


def _say(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------- commands

def cmd_compile(cfg: dict) -> int:
    from .compiler import format_mapping, format_report

    fcfg, path, typed, compiled, _ = load_model(cfg)
    run = Run(cfg, {"fabric_config": fcfg.to_dict(), "program_file": str(path)})
    run.write_text("mapping.txt", format_mapping(compiled.mapping, run.header))
    body = format_report(compiled.report, run.header)
    run.write_text("perf.txt", body)
    run.finish(EXIT_OK)
    _say(body)
    _say(f"# run directory: {run.dir}")
    return EXIT_OK


def cmd_simulate(cfg: dict) -> int:
    from . import datapath as dp
    from .frontend import load_weights

    fcfg, path, typed, compiled, wdir = load_model(cfg)
    weights = load_weights(typed.program, wdir)
    n_feat = sum(d.shape[0] for d in typed.program.inputs)
    try:
        acl = dp.parse_acl(Path(cfg["acl"]).read_text()) if cfg["acl"] else ()
        guard = dp.GuardConfig(cfg["hysteresis"], cfg["timeout"], acl, cfg["floor"],
                               cfg["threshold"], cfg["window"])
    except OSError as e:
        raise UsageError(f"cannot read ACL file: {e}") from None
    run = Run(cfg, {"fabric_config": fcfg.to_dict(), "program_file": str(path)})
    if cfg["trace"]:
        if not Path(cfg["trace"]).is_file():
            raise UsageError(f"trace not found: {cfg['trace']}")
        trace = dp.read_trace(cfg["trace"])
    else:
        trace = dp.synthetic_trace(cfg["packets"], n_feat, cfg["seed"], cfg["flows"], cfg["gap_ns"])
        dp.write_trace(run.path("trace.jsonl"), trace, run.header)
    pc = dp.PipelineConfig(dp.Layout((), dp.feature_names(n_feat)), guard=guard,
                           score_index=cfg["score_index"], base_latency_ns=cfg["base_latency_ns"],
                           bypass=bool(cfg["bypass"]))
    res = dp.run_pipeline(trace, pc, dp.PipelineModel(compiled, typed, weights))
    dp.write_decisions(run.path("decisions.log"), res.decisions, run.header)
    run.write_json("stats.json", {"stats": res.stats})
    run.finish(EXIT_OK)
    _say(run.header)
    _say(json.dumps(res.stats, indent=2, sort_keys=True))
    _say(f"# run directory: {run.dir}")
    return EXIT_OK


def _cache(cfg: dict, run: Run, plot: bool) -> list:
    from . import analysis as an

    pts = an.cache_curve(int_range(cfg["fields"]), float_list(cfg["entropy"]), cfg["n_flows"],
                         cfg["seed"], cfg["jobs"])
    an.write_xy_csv(run.path("cache_miss.csv"), pts, run.header)
    if plot:
        an.plot_xy(run.path("cache_miss.png"), pts, "unstable header fields", "cache miss rate",
                   header=run.header)
    return pts


def _fct(cfg: dict, run: Run, plot: bool) -> list:
    from . import analysis as an

    sizes = int_range(cfg["sizes"])
    rows = an.fct_ratio_by_size(sizes, cfg["unstable"], cfg["entropy_bits"], cfg["seed"],
                                accel=cfg["accel"])
    pts = an.fct_curve(sizes, cfg["unstable"], cfg["entropy_bits"], cfg["seed"], accel=cfg["accel"])
    an.write_xy_csv(run.path("fct.csv"), pts, run.header)
    lines = [f"# {an.TABLE_FORMAT}", run.header,
             f"{'packets':>10} {'caching_ms':>14} {'dataplane_ms':>14} {'ratio':>10}"]
    lines += [f"{s:>10} {c:>14.6g} {d:>14.6g} {r:>10.4g}" for s, c, d, r in rows]
    run.write_text("fct.txt", "\n".join(lines) + "\n")
    if plot:
        an.plot_xy(run.path("fct.png"), [p for p in pts if p[2] != "ratio"], "flow size (packets)",
                   "flow completion time (ms)", logx=True, logy=True, header=run.header)
        an.plot_xy(run.path("fct_ratio.png"), [p for p in pts if p[2] == "ratio"], "flow size (packets)",
                   "caching / data-plane FCT", logx=True, logy=True, header=run.header)
    return rows


def _tables(cfg: dict, run: Run, plot: bool) -> list:
    from . import analysis as an
    from .models import build_suite

    rows = an.report_tables(build_suite(), cfg=fabric_config(cfg.get("fabric")), jobs=cfg["jobs"])
    if plot:
        an.write_report(run.dir, rows, run.header)
        run.files += [run.dir / n for n in ("tables.csv", "tables.txt", "latency.png", "area.png",
                                              "unroll_area.png", "unroll_rate.png")]
    else:
        an.write_rows_csv(run.path("tables.csv"), rows, run.header)
        run.write_text("tables.txt", an.format_rows(rows, run.header))
    return rows


def cmd_analyze(cfg: dict) -> int:
    from . import analysis as an

    run = Run(cfg)
    kind = cfg["kind"]
    if kind == "cache":
        pts = _cache(cfg, run, plot=False)
        _say(run.header)
        _say("fields,miss_rate,series")
        for f, m, s in pts:
            _say(f"{f},{m:.6f},{s}")
    elif kind == "fct":
        rows = _fct(cfg, run, plot=False)
        _say((run.dir / "fct.txt").read_text())
    else:
        rows = _tables(cfg, run, plot=False)
        _say(an.format_rows(rows, run.header))
    run.finish(EXIT_OK)
    _say(f"# run directory: {run.dir}")
    return EXIT_OK


def cmd_report(cfg: dict) -> int:
    from . import analysis as an

    run = Run(cfg)
    rows = _tables(cfg, run, plot=True)
    _cache(cfg, run, plot=True)
    _fct(cfg, run, plot=True)
    run.finish(EXIT_OK)
    _say(an.format_rows(rows, run.header))
    bad = [r for r in rows if not r.ok]
    _say(f"# {len(rows) - len(bad)}/{len(rows)} rows within tolerance; run directory: {run.dir}")
    return EXIT_OK


COMMANDS = {"compile": cmd_compile, "simulate": cmd_simulate, "analyze": cmd_analyze, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    from .datapath import DatapathError, ParseError as TraceError
    from .sim import SimulationError

    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("mrplane: a command is required (compile, simulate, analyze, report)")
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except UsageError as e:
        sys.stderr.write(f"usage error: {e}\n")
        return EXIT_USAGE
    except (FrontendError, CompileError, FabricError, FixedPointError, TraceError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_INVALID
    except DatapathError as e:
        # bad guard settings are caught before any packet runs
        code = EXIT_RUNTIME if "infeasible" in str(e) else EXIT_INVALID
        sys.stderr.write(f"error: {e}\n")
        return code
    except (SimulationError, OSError, RuntimeError, ValueError) as e:
        sys.stderr.write(f"runtime error: {e}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
