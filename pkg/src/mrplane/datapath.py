"""Per-packet switch pipeline: parse, match-action preprocessing, inference, guards, scheduling."""

from __future__ import annotations

import hashlib
import heapq
import itertools
import json
import math
from collections import Counter, OrderedDict, deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping as TMapping, Sequence

from . import fixpoint as fx

FIVE_TUPLE = ("src_ip", "dst_ip", "src_port", "dst_port", "proto")
TRACE_FORMAT = "mrplane-trace 1"
DECISION_FORMAT = "mrplane-decisions 1"


class DatapathError(ValueError):
    pass


class ParseError(DatapathError):
    pass


# ---------------------------------------------------------------- packets

@dataclass(frozen=True)
class PacketRecord:
    arrival_ns: int
    fields: dict
    payload_len: int = 0

    def __post_init__(self):
        missing = [f for f in FIVE_TUPLE if f not in self.fields]
        if missing:
            raise ParseError(f"packet missing five-tuple field {missing[0]!r}")

    @property
    def five_tuple(self) -> tuple:
        return tuple(self.fields[f] for f in FIVE_TUPLE)

    @property
    def flow_id(self) -> int:
        digest = hashlib.blake2b(repr(self.five_tuple).encode(), digest_size=8).digest()
        return int.from_bytes(digest, "big")


def write_trace(path, packets: Iterable[PacketRecord], header: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(f"# {TRACE_FORMAT}\n")
        for h in header.splitlines():
            fh.write(h if h.startswith("#") else f"# {h}")
            fh.write("\n")
        for p in packets:
            rec = {"t": p.arrival_ns, "len": p.payload_len, **p.fields}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trace(path) -> list[PacketRecord]:
    out = []
    with open(path) as fh:
        first = fh.readline().strip()
        if first != f"# {TRACE_FORMAT}":
            raise ParseError(f"{path}: not a packet trace (expected '# {TRACE_FORMAT}')")
        for n, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rec = json.loads(line)
                t = int(rec.pop("t"))
                length = int(rec.pop("len", 0))
            except (ValueError, KeyError) as e:
                raise ParseError(f"{path}:{n}: bad trace record ({e})") from None
            out.append(PacketRecord(t, {k: int(v) for k, v in rec.items()}, length))
    return out


# ---------------------------------------------------------------- PHV

@dataclass(frozen=True)
class Layout:
    """Fixed container order; ``features`` is the slice handed to the fabric."""

    extras: tuple = ()
    features: tuple = ()

    @property
    def containers(self) -> tuple:
        seen = list(FIVE_TUPLE)
        for f in (*self.extras, *self.features):
            if f not in seen:
                seen.append(f)
        return tuple(seen)


@dataclass
class PHV:
    layout: Layout
    values: list

    def index(self, name: str) -> int:
        try:
            return self.layout.containers.index(name)
        except ValueError:
            raise DatapathError(f"no container {name!r} in the header vector") from None

    def get(self, name: str) -> int:
        return self.values[self.index(name)]

    def set(self, name: str, v: int) -> None:
        self.values[self.index(name)] = int(v)

    def feature_slice(self) -> list[int]:
        return [self.get(f) for f in self.layout.features]

    def bypass_slice(self) -> list[int]:
        feats = set(self.layout.features)
        return [v for k, v in zip(self.layout.containers, self.values) if k not in feats]


def parse(p: PacketRecord, layout: Layout) -> PHV:
    vals = []
    for name in layout.containers:
        if name in FIVE_TUPLE and name not in p.fields:
            raise ParseError(f"packet missing five-tuple field {name!r}")
        vals.append(int(p.fields.get(name, 0)))
    return PHV(layout, vals)


# ---------------------------------------------------------------- match-action tables

@dataclass(frozen=True)
class Action:
    """``op`` is one of set, copy, add, shift, log2, lookup, noop.

    shift uses a positive value for a right shift. log2 writes the bit length of
    the source, the usual integer stand-in for a logarithm. lookup indexes
    ``table`` with the source value, clamped to the table ends.
    """

    op: str = "noop"
    dest: str = ""
    src: str = ""
    value: int = 0
    table: tuple = ()

    def apply(self, phv: PHV) -> None:
        op = self.op
        if op == "noop":
            return
        if op == "set":
            phv.set(self.dest, self.value)
            return
        x = phv.get(self.src)
        if op == "copy":
            r = x
        elif op == "add":
            r = x + self.value
        elif op == "shift":
            r = x >> self.value if self.value >= 0 else x << -self.value
        elif op == "log2":
            r = max(x, 0).bit_length()
        elif op == "lookup":
            r = self.table[max(0, min(len(self.table) - 1, x))]
        else:
            raise DatapathError(f"unknown action {op!r}")
        phv.set(self.dest, r)


@dataclass(frozen=True)
class Rule:
    pattern: tuple  # exact: values; ternary: (value, mask) pairs; range: (lo, hi) pairs
    actions: tuple
    priority: int = 0


@dataclass
class MatTable:
    name: str
    match_kind: str  # exact | ternary | range
    keys: tuple
    entries: list = field(default_factory=list)
    default_action: tuple = ()

    def __post_init__(self):
        if self.match_kind not in ("exact", "ternary", "range"):
            raise DatapathError(f"unknown match kind {self.match_kind!r}")

    def add(self, pattern, actions, priority: int = 0) -> None:
        if len(pattern) != len(self.keys):
            raise DatapathError(f"{self.name}: pattern arity {len(pattern)} != {len(self.keys)} keys")
        self.entries.append(Rule(tuple(pattern), tuple(actions), priority))

    def matches(self, rule: Rule, key: Sequence[int]) -> bool:
        if self.match_kind == "exact":
            return tuple(key) == rule.pattern
        if self.match_kind == "ternary":
            return all((k & m) == (v & m) for k, (v, m) in zip(key, rule.pattern))
        return all(lo <= k <= hi for k, (lo, hi) in zip(key, rule.pattern))

    def lookup(self, key: Sequence[int]) -> tuple:
        # higher priority first; insertion order breaks ties
        order = sorted(range(len(self.entries)), key=lambda i: -self.entries[i].priority)
        for i in order:
            if self.matches(self.entries[i], key):
                return self.entries[i].actions
        return self.default_action


def mat_apply(t: MatTable, phv: PHV) -> PHV:
    key = [phv.get(k) for k in t.keys]
    for a in t.lookup(key):
        a.apply(phv)
    return phv


# ---------------------------------------------------------------- inference

def split_features(features: Sequence[int], arity: TMapping[str, int], fmt: fx.FixedFormat) -> dict:
    """Cut the feature slice into program inputs (declaration order), saturating to the format."""
    need = sum(arity.values())
    if len(features) != need:
        raise DatapathError(f"feature slice has {len(features)} values, program expects {need}")
    out, k = {}, 0
    for name, n in arity.items():
        out[name] = [fmt.saturate(int(v)) for v in features[k:k + n]]
        k += n
    return out


@dataclass
class InferenceResult:
    accepted: bool
    scores: list | None = None  # flattened outputs in declaration order, raw fixed point
    cycle: int = 0
    done_cycle: int | None = None


class InferenceEngine:
    """Feeds feature slices to the cycle simulator in arrival order.

    A packet whose arrival cycle falls inside the previous accept's initiation
    interval is not accepted and is reported as rate-limited.
    """

    def __init__(self, compiled, weights: TMapping, typed):
        from .sim import FabricSim

        self.compiled = compiled
        self.typed = typed
        p = typed.program
        self.fmt = p.format
        self.arity = {d.name: d.shape[0] for d in p.inputs}
        self.out_names = [d.name for d in p.outputs]
        self.sim = FabricSim(compiled.mapping, weights)
        self.clock_ghz = compiled.mapping.cfg.clock_ghz
        self.latency_ns = compiled.report.latency_ns

    def cycle_of(self, arrival_ns: int) -> int:
        return int(math.floor(arrival_ns * self.clock_ghz + 1e-9))

    def run(self, arrivals: Sequence[int], features: Sequence[Sequence[int]]) -> list[InferenceResult]:
        sim = self.sim
        state = sim.new_state()
        results: list[InferenceResult] = []
        seq_to_idx = {}
        for i, (t, f) in enumerate(zip(arrivals, features)):
            inputs = split_features(f, self.arity, self.fmt)
            cyc = self.cycle_of(t)
            if cyc < state.cycle:
                raise DatapathError("packet trace is not sorted by arrival time")
            sim.advance_to(state, cyc)
            if sim.offer(state, inputs):
                seq_to_idx[state.accepted - 1] = i
                results.append(InferenceResult(True, cycle=cyc))
            else:
                results.append(InferenceResult(False, cycle=cyc))
        sim.drain(state)
        for cyc, seq, out in state.emitted:
            r = results[seq_to_idx[seq]]
            r.scores = [v for name in self.out_names for v in out[name]]
            r.done_cycle = cyc
        return results


def infer(phv: PHV, compiled, weights: TMapping, typed) -> list[int]:
    """Single-packet inference; returns the flattened raw outputs."""
    (r,) = InferenceEngine(compiled, weights, typed).run([0], [phv.feature_slice()])
    return r.scores


# ---------------------------------------------------------------- guards

@dataclass(frozen=True)
class GuardConfig:
    hysteresis_delta: float = 0.0
    decision_timeout_pkts: int = 1
    # each ACL entry maps a field to a (value, mask) ternary pattern; all fields must match
    acl: tuple = ()
    min_bandwidth_frac: float = 0.0
    threshold: float = 0.5
    window: int = 1024
    flow_state_size: int = 4096

    def __post_init__(self):
        if self.hysteresis_delta < 0:
            raise DatapathError("hysteresis_delta must be >= 0")
        if self.decision_timeout_pkts < 1:
            raise DatapathError("decision_timeout_pkts must be >= 1")
        if not 0.0 <= self.min_bandwidth_frac < 1.0:
            raise DatapathError("min_bandwidth_frac must lie in [0, 1)")
        if self.window < 1 or self.flow_state_size < 1:
            raise DatapathError("window and flow_state_size must be positive")


def acl_match(phv: PHV, acl: Iterable) -> bool:
    for entry in acl:
        if all((phv.get(f) & m) == (v & m) for f, (v, m) in dict(entry).items()):
            return True
    return False


def guard_acl(phv: PHV, score: float | None, g: GuardConfig) -> bool:
    """True means anomalous. A missing score (no inference) leaves only the ACL."""
    flagged = score is not None and score > g.threshold
    return flagged or acl_match(phv, g.acl)


@dataclass
class FlowState:
    decision: int = -1  # -1 before the first packet
    dwell: int = 0  # packets since the decision last changed


def guard_hysteresis(st: FlowState, score: float, g: GuardConfig) -> int:
    """Per-flow decision with a minimum dwell, then a boundary shifted away from the current class."""
    b = g.threshold
    if st.decision < 0:
        st.decision, st.dwell = int(score > b), 1
        return st.decision
    if st.dwell >= g.decision_timeout_pkts:
        if st.decision == 0 and score > b + g.hysteresis_delta:
            st.decision, st.dwell = 1, 0
        elif st.decision == 1 and score < b - g.hysteresis_delta:
            st.decision, st.dwell = 0, 0
    st.dwell += 1
    return st.decision


class FlowTable:
    """Bounded per-flow guard state; the least recently seen flow is evicted."""

    def __init__(self, size: int):
        self.size = size
        self.d: OrderedDict[int, FlowState] = OrderedDict()
        self.evictions = 0

    def get(self, key: int) -> FlowState:
        st = self.d.get(key)
        if st is None:
            st = self.d[key] = FlowState()
            if len(self.d) > self.size:
                self.d.popitem(last=False)
                self.evictions += 1
        else:
            self.d.move_to_end(key)
        return st


# ---------------------------------------------------------------- scheduling

class PifoQueue:
    """Push-in first-out queue: minimum rank leaves first, FIFO among equal ranks."""

    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()
        self._flows: dict = {}  # flow -> deque of entries in arrival order, dead ones dropped lazily
        self._live: Counter = Counter()
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def push(self, item, rank: int, flow=None) -> None:
        entry = [rank, next(self._seq), flow, item, True]
        heapq.heappush(self._heap, entry)
        self._flows.setdefault(flow, deque()).append(entry)
        self._live[flow] += 1
        self._n += 1

    def _take(self, entry) -> list:
        entry[4] = False
        flow = entry[2]
        self._live[flow] -= 1
        if not self._live[flow]:
            del self._live[flow]
            del self._flows[flow]
        self._n -= 1
        return entry

    def _head(self, flow) -> list:
        fl = self._flows[flow]
        while not fl[0][4]:
            fl.popleft()
        return fl[0]

    def peek(self) -> tuple:
        while self._heap and not self._heap[0][4]:
            heapq.heappop(self._heap)
        if not self._heap:
            raise IndexError("pop from an empty queue")
        e = self._heap[0]
        return e[3], e[0]

    def pop(self) -> tuple:
        """Return (item, rank) of the minimum-rank, earliest entry."""
        e = self.pop_entry()
        return e[3], e[0]

    def pop_entry(self) -> list:
        self.peek()
        return self._take(heapq.heappop(self._heap))

    def pop_flow(self, flow) -> tuple:
        """Dequeue the oldest entry of ``flow`` regardless of its rank."""
        e = self.pop_flow_entry(flow)
        return e[3], e[0]

    def pop_flow_entry(self, flow) -> list:
        # the heap copy stays behind, marked dead
        return self._take(self._head(flow))

    def backlogged(self) -> list:
        return list(self._flows)

    def head_seq(self, flow) -> int:
        return self._head(flow)[1]


class MinBandwidthScheduler:
    """PIFO order with a per-flow floor over tumbling windows of departures.

    Each window grants every backlogged flow ``quota = ceil(frac * window)``
    departures. When the outstanding quota of backlogged flows fills every slot
    left in the window, the head of the neediest flow leaves next whatever its rank.
    """

    def __init__(self, frac: float, window: int = 1024):
        self.frac = frac
        self.window = window
        self.quota = math.ceil(frac * window - 1e-9) if frac > 0 else 0
        self.slot = 0
        self.got: Counter = Counter()
        self.forced = 0

    def check(self, flows: int) -> None:
        if self.quota * flows > self.window:
            raise DatapathError(
                f"bandwidth floors infeasible: {flows} flows x {self.frac} exceeds the window")

    def next(self, q: PifoQueue) -> tuple:
        """Pick and account the next departure; returns (item, rank, flow, forced)."""
        e, forced = None, False
        if self.quota:
            flows = q.backlogged()
            self.check(len(flows))
            needs = {f: self.quota - self.got[f] for f in flows if self.got[f] < self.quota}
            if needs and sum(needs.values()) >= self.window - self.slot:
                f = min(needs, key=lambda k: (-needs[k], q.head_seq(k)))
                e, forced = q.pop_flow_entry(f), True
                self.forced += 1
        if e is None:
            e = q.pop_entry()
        rank, _, flow, item, _ = e
        self.got[flow] += 1
        self.slot += 1
        if self.slot == self.window:
            self.slot = 0
            self.got.clear()
        return item, rank, flow, forced


def schedule(q: PifoQueue, g: GuardConfig | None = None) -> list:
    """Drain ``q`` under the guard's bandwidth floor; returns items in departure order."""
    sched = MinBandwidthScheduler(g.min_bandwidth_frac if g else 0.0, g.window if g else 1024)
    out = []
    while len(q):
        out.append(sched.next(q)[0])
    return out


# ---------------------------------------------------------------- pipeline

@dataclass
class PipelineModel:
    compiled: object  # compiler.Compiled
    typed: object  # frontend.TypedProgram
    weights: dict


@dataclass
class PipelineConfig:
    layout: Layout
    tables: tuple = ()
    guard: GuardConfig = field(default_factory=GuardConfig)
    score_index: int = 0  # which flattened output element is the anomaly score
    base_latency_ns: float = 1000.0  # the switch pipeline without the inference block
    egress_ns: float = 1.0  # one departure per interval on the output port
    anomalous_rank: int = 1 << 30
    benign_rank: int = 0
    bypass: bool = False


@dataclass
class Decision:
    index: int
    flow: int
    verdict: str  # "anomalous" | "benign"
    rank: int
    latency_ns: float  # pipeline latency: base plus inference when the fabric ran
    rate_limited: bool = False
    score: float | None = None
    ml_flag: bool = False
    acl_flag: bool = False
    departure_ns: float = 0.0


@dataclass
class PipelineResult:
    decisions: list
    stats: dict
    order: list  # packet indices in departure order


def run_pipeline(trace: Sequence[PacketRecord], config: PipelineConfig,
                 model: PipelineModel | None = None) -> PipelineResult:
    """Parse, preprocess, infer, guard and schedule every packet of ``trace`` in order."""
    if not trace:
        return PipelineResult([], {}, [])
    if any(b.arrival_ns < a.arrival_ns for a, b in zip(trace, trace[1:])):
        raise DatapathError("packet trace is not sorted by arrival time")
    g = config.guard
    infer_on = model is not None and not config.bypass

    phvs = []
    for p in trace:
        phv = parse(p, config.layout)
        for t in config.tables:
            mat_apply(t, phv)
        phvs.append(phv)

    results: list = [None] * len(trace)
    inf_ns = 0.0
    scale = 1.0
    if infer_on:
        engine = InferenceEngine(model.compiled, model.weights, model.typed)
        results = engine.run([p.arrival_ns for p in trace], [h.feature_slice() for h in phvs])
        inf_ns = engine.latency_ns
        scale = float(engine.fmt.scale)

    flows = FlowTable(g.flow_state_size)
    decisions = []
    for i, (p, phv, r) in enumerate(zip(trace, phvs, results)):
        fid = p.flow_id
        acl = acl_match(phv, g.acl)
        score = None
        limited = infer_on and not r.accepted
        if infer_on and r.accepted:
            score = r.scores[config.score_index] / scale
            ml = bool(guard_hysteresis(flows.get(fid), score, g))
        else:
            # no fresh score: keep the flow's standing decision, if any
            st = flows.d.get(fid)
            ml = bool(st is not None and st.decision == 1)
        anomalous = ml or acl
        lat = config.base_latency_ns + (inf_ns if infer_on and r.accepted else 0.0)
        decisions.append(Decision(
            i, fid, "anomalous" if anomalous else "benign",
            config.anomalous_rank if anomalous else config.benign_rank,
            lat, limited, score, ml, acl))

    order = _egress(trace, decisions, config)
    stats = _stats(decisions, [p.arrival_ns for p in trace], config, inf_ns if infer_on else 0.0, flows)
    return PipelineResult(decisions, stats, order)


def _egress(trace, decisions, config: PipelineConfig) -> list:
    """Event loop for one output port serving a PIFO queue."""
    g = config.guard
    ready = sorted(range(len(trace)), key=lambda i: (trace[i].arrival_ns + decisions[i].latency_ns, i))
    sched = MinBandwidthScheduler(g.min_bandwidth_frac, g.window)
    q = PifoQueue()
    order = []
    k = 0
    t = 0.0
    while k < len(ready) or len(q):
        if not len(q):
            i = ready[k]
            t = max(t, trace[i].arrival_ns + decisions[i].latency_ns)
        while k < len(ready) and trace[ready[k]].arrival_ns + decisions[ready[k]].latency_ns <= t:
            d = decisions[ready[k]]
            q.push(d.index, d.rank, d.flow)
            k += 1
        idx = sched.next(q)[0]
        decisions[idx].departure_ns = t
        order.append(idx)
        t += config.egress_ns
    return order


def _stats(decisions, arrivals, config: PipelineConfig, inf_ns: float, flows: FlowTable) -> dict:
    n = len(decisions)
    inferred = [d for d in decisions if d.score is not None]
    waits = [d.departure_ns - (p_arr + d.latency_ns) for d, p_arr in zip(decisions, arrivals)]
    verdicts = Counter(d.verdict for d in decisions)
    mean_inf = inf_ns * len(inferred) / n
    return {
        "packets": n,
        "inferred": len(inferred),
        "rate_limited": sum(d.rate_limited for d in decisions),
        "anomalous": verdicts["anomalous"],
        "benign": verdicts["benign"],
        "ml_flags": sum(d.ml_flag for d in decisions),
        "acl_flags": sum(d.acl_flag for d in decisions),
        "flow_evictions": flows.evictions,
        "stage_latency_ns": {
            "pipeline": config.base_latency_ns,
            "inference": mean_inf,
        },
        "added_latency_ns": inf_ns,
        "added_latency_pct": 100.0 * inf_ns / config.base_latency_ns if config.base_latency_ns else 0.0,
        "mean_latency_ns": sum(d.latency_ns for d in decisions) / n,
        "mean_queue_wait_ns": sum(waits) / n,
    }


def write_decisions(path, decisions: Iterable[Decision], header: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(f"# {DECISION_FORMAT}\n")
        for h in header.splitlines():
            fh.write((h if h.startswith("#") else f"# {h}") + "\n")
        for d in decisions:
            rec = {"index": d.index, "verdict": d.verdict, "rank": d.rank,
                   "latency_ns": d.latency_ns, "rate_limited": d.rate_limited}
            fh.write(json.dumps(rec) + "\n")


def read_decisions(path) -> list[dict]:
    with open(path) as fh:
        if fh.readline().strip() != f"# {DECISION_FORMAT}":
            raise DatapathError(f"{path}: not a decision log")
        return [json.loads(ln) for ln in fh if ln.strip() and not ln.startswith("#")]


# ---------------------------------------------------------------- helpers for tools

def feature_names(n: int) -> tuple:
    return tuple(f"f{i}" for i in range(n))


def synthetic_trace(n_packets: int, n_features: int, seed: int, n_flows: int = 64, gap_ns: int = 1,
                    lo: int = -32, hi: int = 32) -> list[PacketRecord]:
    """Reproducible trace: flows drawn uniformly, features uniform in [lo, hi]."""
    import numpy as np

    rng = np.random.default_rng(seed)
    flows = rng.integers(0, n_flows, size=n_packets)
    feats = rng.integers(lo, hi + 1, size=(n_packets, n_features))
    names = feature_names(n_features)
    out = []
    for i in range(n_packets):
        f = int(flows[i])
        fields = {"src_ip": 0x0A000000 + f, "dst_ip": 0x0A0000FF, "src_port": 1024 + f,
                  "dst_port": 443, "proto": 6}
        fields.update({k: int(v) for k, v in zip(names, feats[i])})
        out.append(PacketRecord(i * gap_ns, fields, 64))
    return out


def parse_acl(text: str) -> tuple:
    """One deny entry per line: ``field=value[/mask]`` terms separated by spaces.

    A missing mask matches all bits. Lines starting with ``#`` are ignored.
    """
    entries = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        entry = {}
        for term in line.split():
            try:
                name, val = term.split("=", 1)
                v, _, m = val.partition("/")
                entry[name] = (int(v, 0), int(m, 0) if m else -1)
            except ValueError:
                raise DatapathError(f"ACL line {n}: bad term {term!r}") from None
        entries.append(tuple(sorted(entry.items())))
    return tuple(entries)
