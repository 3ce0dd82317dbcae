"""Deterministic synthetic microservice telemetry with workload regimes and
injected faults.

Every random draw comes from a counter-based PRNG (Philox) whose key is
derived from (scenario seed, stream name): metric noise uses one stream per
(component, signal) indexed by tick, traces and logs use one stream per tick.
Generation order therefore never affects emitted values, and identical
configs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox

from .errors import InvalidScenario
from .telemetry import FaultInterval, LogRecord, MetricSample, RegimeInterval, TraceSpan

TICK_US = 1_000_000
FAILURE_TYPES = ("cpu_stress", "latency_spike", "error_burst")
# Signal each failure type scales, and the error-log template it bursts with.
FAULT_SIGNAL = {
    "cpu_stress": "cpu",
    "latency_spike": "latency_ms",
    "error_burst": "error_rate",
}
FAULT_LOG_MESSAGE = {
    "cpu_stress": "cpu throttled at {n} percent",
    "latency_spike": "request {n} timed out after {m} ms",
    "error_burst": "request {n} rejected: upstream unavailable",
}
BURST_LINES_PER_SEC = 10
METRIC_NAMES = ("cpu", "error_rate", "latency_ms", "request_rate")


@dataclass(frozen=True)
class ComponentBaseline:
    request_rate: float   # req/s
    latency_ms: float
    cpu: float            # fraction of one core
    error_rate: float     # fraction of requests
    log_rate: float       # info lines/s


@dataclass
class RegimeSpec:
    regime_id: int
    name: str
    baselines: dict[str, ComponentBaseline]


@dataclass(frozen=True)
class FaultSpec:
    start_us: int
    end_us: int
    target_component: str
    failure_type: str
    magnitude: float


@dataclass(frozen=True)
class ScheduleEntry:
    start_us: int
    end_us: int
    regime_id: int


@dataclass
class ScenarioConfig:
    components: list[str]
    edges: list[tuple[str, str]]
    regimes: list[RegimeSpec]
    schedule: list[ScheduleEntry]
    faults: list[FaultSpec] = field(default_factory=list)
    duration_us: int = 0
    seed: int = 0
    noise_sigma: float = 0.05
    # Telemetry blackout around each regime switchover (redeploy quiesce):
    # nothing is emitted within +/- this many seconds of an internal
    # schedule boundary.
    switch_quiet_s: int = 0


def _validate(cfg: ScenarioConfig) -> None:
    comps = cfg.components
    if len(set(comps)) != len(comps) or not all(comps):
        raise InvalidScenario("components must be distinct and non-empty")
    known = set(comps)
    for a, b in cfg.edges:
        if a not in known or b not in known:
            raise InvalidScenario(f"edge ({a}, {b}) references unknown component")
    # Kahn's algorithm: the call graph must be acyclic.
    indeg = {c: 0 for c in comps}
    for _, b in cfg.edges:
        indeg[b] += 1
    queue = [c for c in comps if indeg[c] == 0]
    seen = 0
    adj = {c: [] for c in comps}
    for a, b in cfg.edges:
        adj[a].append(b)
    while queue:
        seen += 1
        for child in adj[queue.pop()]:
            indeg[child] -= 1
            if indeg[child] == 0:
                queue.append(child)
    if seen != len(comps):
        raise InvalidScenario("topology has a cycle")

    ids = {r.regime_id for r in cfg.regimes}
    if len(ids) != len(cfg.regimes):
        raise InvalidScenario("duplicate regime_id")
    for r in cfg.regimes:
        if set(r.baselines) != known:
            raise InvalidScenario(f"regime {r.regime_id} missing component baselines")
        for b in r.baselines.values():
            if min(b.request_rate, b.latency_ms, b.log_rate) < 0:
                raise InvalidScenario("rates must be non-negative")
            if not (0.0 <= b.cpu <= 1.0 and 0.0 <= b.error_rate <= 1.0):
                raise InvalidScenario("cpu and error_rate must lie in [0, 1]")

    cursor = 0
    for entry in cfg.schedule:
        if entry.start_us != cursor or entry.end_us <= entry.start_us:
            raise InvalidScenario("schedule must tile [0, duration) without gaps")
        if entry.regime_id not in ids:
            raise InvalidScenario(f"schedule references unknown regime {entry.regime_id}")
        cursor = entry.end_us
    if cursor != cfg.duration_us:
        raise InvalidScenario("schedule does not cover [0, duration)")

    for f in cfg.faults:
        if f.failure_type not in FAILURE_TYPES:
            raise InvalidScenario(f"unknown failure type {f.failure_type!r}")
        if f.target_component not in known:
            raise InvalidScenario(f"fault targets unknown component {f.target_component!r}")
        if not (0 <= f.start_us < f.end_us <= cfg.duration_us):
            raise InvalidScenario("fault interval must lie within [0, duration)")
        if f.magnitude <= 0:
            raise InvalidScenario("fault magnitude must be positive")
    if cfg.noise_sigma < 0:
        raise InvalidScenario("noise_sigma must be non-negative")
    if cfg.switch_quiet_s < 0:
        raise InvalidScenario("switch_quiet_s must be non-negative")


def _key(seed: int, *parts) -> int:
    blob = "|".join(str(p) for p in (seed,) + parts).encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=16).digest(), "big")


def _stream(seed: int, *parts) -> Generator:
    return Generator(Philox(key=_key(seed, *parts)))


def regime_intervals(cfg: ScenarioConfig) -> list[RegimeInterval]:
    """Ground-truth regime intervals, for purity checks against clusters."""
    return [RegimeInterval(e.start_us, e.end_us, e.regime_id) for e in cfg.schedule]


def _regime_by_tick(cfg: ScenarioConfig, n_ticks: int) -> np.ndarray:
    out = np.zeros(n_ticks, dtype=np.int64)
    for entry in cfg.schedule:
        lo = entry.start_us // TICK_US
        hi = min(n_ticks, -(-entry.end_us // TICK_US))
        out[lo:hi] = entry.regime_id
    return out


def _fault_multiplier(cfg: ScenarioConfig, component: str, signal: str,
                      n_ticks: int) -> np.ndarray:
    mult = np.ones(n_ticks)
    for f in cfg.faults:
        if f.target_component == component and FAULT_SIGNAL[f.failure_type] == signal:
            lo = f.start_us // TICK_US
            hi = min(n_ticks, -(-f.end_us // TICK_US))
            mult[lo:hi] *= f.magnitude
    return mult


def _active_faults(cfg: ScenarioConfig, tick: int) -> list[FaultSpec]:
    t_us = tick * TICK_US
    return [f for f in cfg.faults if f.start_us <= t_us < f.end_us]


def quiet_intervals(cfg: ScenarioConfig) -> list[tuple[int, int]]:
    """Switchover blackout intervals around internal schedule boundaries."""
    if cfg.switch_quiet_s <= 0:
        return []
    q = cfg.switch_quiet_s * TICK_US
    out = []
    for entry in cfg.schedule[:-1]:
        out.append((max(0, entry.end_us - q), min(cfg.duration_us, entry.end_us + q)))
    return out


def _emitting_ticks(cfg: ScenarioConfig, n_ticks: int) -> np.ndarray:
    mask = np.ones(n_ticks, dtype=bool)
    for lo, hi in quiet_intervals(cfg):
        mask[lo // TICK_US:-(-hi // TICK_US)] = False
    return mask


def generate(cfg: ScenarioConfig) -> tuple[list[MetricSample], list[TraceSpan],
                                           list[LogRecord], list[FaultInterval]]:
    """Emit one scenario's telemetry plus one label record per fault."""
    _validate(cfg)
    n_ticks = cfg.duration_us // TICK_US
    if n_ticks == 0:
        return [], [], [], []

    regimes = {r.regime_id: r for r in cfg.regimes}
    regime_of = _regime_by_tick(cfg, n_ticks)
    emitting = _emitting_ticks(cfg, n_ticks)

    def base_series(component: str, attr: str) -> np.ndarray:
        per_regime = {rid: getattr(r.baselines[component], attr)
                      for rid, r in regimes.items()}
        return np.array([per_regime[rid] for rid in regime_of])

    # Metrics: one Gaussian-noise stream per (component, metric), tick-indexed.
    values: dict[tuple[str, str], np.ndarray] = {}
    for comp in cfg.components:
        for name in METRIC_NAMES:
            base = base_series(comp, name if name != "cpu" else "cpu")
            noise = _stream(cfg.seed, "metric", comp, name).normal(size=n_ticks)
            v = base * (1.0 + cfg.noise_sigma * noise)
            v = v * _fault_multiplier(cfg, comp, name, n_ticks)
            v = np.maximum(v, 0.0)
            if name == "error_rate":
                v = np.minimum(v, 1.0)
            values[(comp, name)] = v
    metrics = [MetricSample(t * TICK_US, comp, name, float(values[(comp, name)][t]))
               for t in range(n_ticks) if emitting[t]
               for comp in cfg.components
               for name in METRIC_NAMES]

    # Traces: requests enter at the first component without callers and fan
    # out along the edges; spans nest depth-first.
    indeg = {c: 0 for c in cfg.components}
    for _, b in cfg.edges:
        indeg[b] += 1
    roots = [c for c in cfg.components if indeg[c] == 0]
    root = roots[0] if roots else cfg.components[0]
    children = {c: [] for c in cfg.components}
    for a, b in cfg.edges:
        children[a].append(b)

    spans: list[TraceSpan] = []
    for t in range(n_ticks):
        if not emitting[t]:
            continue
        rng = _stream(cfg.seed, "trace", t)
        regime = regimes[int(regime_of[t])]
        rate = regime.baselines[root].request_rate
        n_req = int(rate) + (1 if rng.uniform() < rate - int(rate) else 0)
        if n_req == 0:
            continue
        active = _active_faults(cfg, t)
        lat_mult = {c: 1.0 for c in cfg.components}
        err_prob = {c: regime.baselines[c].error_rate for c in cfg.components}
        for f in active:
            if f.failure_type == "latency_spike":
                lat_mult[f.target_component] *= f.magnitude
            elif f.failure_type == "error_burst":
                err_prob[f.target_component] = min(
                    0.95, err_prob[f.target_component] * f.magnitude)
        gap = TICK_US // n_req
        for i in range(n_req):
            trace_id = f"tr-{t}-{i}"
            counter = [0]

            def emit(node: str, start: int, parent: str | None) -> int:
                span_id = f"sp-{counter[0]}"
                counter[0] += 1
                base_ms = regime.baselines[node].latency_ms
                own_ms = max(0.0, base_ms * (1.0 + cfg.noise_sigma * rng.normal()))
                own_us = int(own_ms * lat_mult[node] * 1000.0)
                status = "error" if rng.uniform() < err_prob[node] else "ok"
                cursor = start + 200
                total_children = 0
                for child in children[node]:
                    d = emit(child, cursor, span_id)
                    cursor += d
                    total_children += d
                duration = own_us + total_children + 200 * len(children[node])
                spans.append(TraceSpan(trace_id, span_id, parent, node, "handle",
                                       start, duration, status))
                return duration

            emit(root, t * TICK_US + i * gap, None)
    spans.sort(key=lambda s: (s.start, s.trace_id, s.span_id))

    # Logs: exact-rate heartbeats, request-proportional error lines, plus a
    # fixed-rate error burst on a fault's target while the fault is active.
    logs: list[LogRecord] = []
    for comp in cfg.components:
        hb_u = _stream(cfg.seed, "log-hb", comp).uniform(size=n_ticks)
        er_u = _stream(cfg.seed, "log-err", comp).uniform(size=n_ticks)
        for t in range(n_ticks):
            if not emitting[t]:
                continue
            t_us = t * TICK_US
            regime = regimes[int(regime_of[t])]
            b = regime.baselines[comp]
            n_hb = int(b.log_rate) + (1 if hb_u[t] < b.log_rate - int(b.log_rate) else 0)
            for j in range(n_hb):
                logs.append(LogRecord(t_us + j * (TICK_US // (n_hb + 1)), comp, "info",
                                      f"heartbeat {t * 100 + j} ok"))
            err_rate = b.error_rate * b.request_rate
            n_err = int(err_rate) + (1 if er_u[t] < err_rate - int(err_rate) else 0)
            for j in range(n_err):
                logs.append(LogRecord(t_us + 137 + j * 211, comp, "error",
                                      f"request {t * 100 + j} failed with status 500"))
            for f in _active_faults(cfg, t):
                if f.target_component != comp:
                    continue
                template = FAULT_LOG_MESSAGE[f.failure_type]
                for j in range(BURST_LINES_PER_SEC):
                    msg = template.format(n=t * 100 + j, m=50 + j)
                    logs.append(LogRecord(t_us + 53 + j * 97, comp, "error", msg))
    logs.sort(key=lambda r: (r.ts, r.component, r.level, r.message))

    labels = [FaultInterval(f.start_us, f.end_us, f.target_component, f.failure_type)
              for f in cfg.faults]
    return metrics, spans, logs, labels


def default_scenario(n_regimes: int, n_faults: int, seed: int) -> ScenarioConfig:
    """Fixture factory: 5-service call chain, regimes 3x apart in request
    rate and cpu, faults cycling through the three failure types.

    Layout choices that make the fixture usable for the standard evaluation
    protocol: the final regime holds the last 60% of the run (so every
    regime has windows on both sides of a 70/30 time-ordered split), each
    switchover has a 30 s telemetry blackout on both sides (redeploy
    quiesce), and faults are stride-aligned and kept clear of blackouts.
    """
    if n_regimes < 1:
        raise InvalidScenario("n_regimes must be >= 1")
    comps = ["svc-a", "svc-b", "svc-c", "svc-d", "svc-e"]
    edges = [(comps[i], comps[i + 1]) for i in range(len(comps) - 1)]

    regimes = []
    for i in range(n_regimes):
        baseline = ComponentBaseline(
            request_rate=0.5 * 3 ** i,
            latency_ms=20.0 * (i + 1),
            cpu=0.18 / 3 ** (n_regimes - 1 - i),
            error_rate=0.0,
            log_rate=float(i + 1),
        )
        regimes.append(RegimeSpec(i, f"regime-{i}", {c: baseline for c in comps}))

    duration_s = 1200 * n_regimes
    duration_us = duration_s * TICK_US
    schedule = []
    if n_regimes == 1:
        schedule.append(ScheduleEntry(0, duration_us, 0))
    else:
        seg_s = int(round(0.4 * duration_s / (n_regimes - 1) / 30.0)) * 30
        cursor = 0
        for i in range(n_regimes - 1):
            schedule.append(ScheduleEntry(cursor, cursor + seg_s * TICK_US, i))
            cursor += seg_s * TICK_US
        schedule.append(ScheduleEntry(cursor, duration_us, n_regimes - 1))

    quiet = [(e.end_us - 30 * TICK_US, e.end_us + 30 * TICK_US)
             for e in schedule[:-1]]
    faults = []
    for i in range(n_faults):
        start_s = (duration_s * (2 * i + 1)) // (2 * n_faults)
        start_s = (start_s // 30) * 30
        while any(start_s * TICK_US < hi and (start_s + 60) * TICK_US > lo
                  for lo, hi in quiet):
            start_s += 90
        start_s = min(start_s, duration_s - 60)
        faults.append(FaultSpec(start_s * TICK_US, (start_s + 60) * TICK_US,
                                comps[i % len(comps)],
                                FAILURE_TYPES[i % len(FAILURE_TYPES)],
                                4.0))
    return ScenarioConfig(comps, edges, regimes, schedule, faults,
                          duration_us, seed, switch_quiet_s=30)
