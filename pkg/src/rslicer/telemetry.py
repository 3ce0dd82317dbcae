"""Telemetry ingestion: parse raw metric/trace/log files and align them into
sliding half-open time windows.

All timestamps are integer microseconds since epoch. Windows are half-open
``[start, end)``; a span belongs to the window containing its *start*
timestamp. Window overlap is interval Jaccard, which feeds the temporal
consistency weighting downstream.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    DuplicateSpan,
    InvalidWindowing,
    MalformedLine,
    MalformedRow,
    NonFiniteValue,
    UnknownLevel,
)

METRICS_HEADER = ["ts_us", "component", "metric", "value"]
TRACE_KEYS = {
    "trace_id", "span_id", "parent_span_id", "component",
    "operation", "start_us", "duration_us", "status",
}
LOG_KEYS = {"ts_us", "component", "level", "message"}
LOG_LEVELS = ("debug", "info", "warn", "error", "fatal")
SPAN_STATUSES = ("ok", "error")


class SpanStatus(str, Enum):
    OK = "ok"
    ERROR = "error"


class LogLevel(str, Enum):
    DEBUG = "debug"
    INFO = "info"
    WARN = "warn"
    ERROR = "error"
    FATAL = "fatal"


@dataclass(frozen=True)
class MetricSample:
    ts: int
    component: str
    metric_name: str
    value: float


@dataclass(frozen=True)
class TraceSpan:
    trace_id: str
    span_id: str
    parent_span_id: str | None
    component: str
    operation: str
    start: int
    duration_us: int
    status: str


@dataclass(frozen=True)
class LogRecord:
    ts: int
    component: str
    level: str
    message: str


@dataclass(frozen=True)
class TimeWindow:
    start: int
    end: int
    window_id: int

    def __post_init__(self):
        if self.start >= self.end:
            raise InvalidWindowing(f"window start {self.start} >= end {self.end}")


@dataclass(frozen=True)
class WindowLabel:
    anomalous: bool
    root_cause_component: str | None = None
    failure_type: str | None = None
    regime_id: int | None = None


@dataclass(frozen=True)
class FaultInterval:
    """Labeled fault interval, as read from the label file."""

    start_us: int
    end_us: int
    root_cause_component: str
    failure_type: str


@dataclass(frozen=True)
class RegimeInterval:
    """Ground-truth workload regime interval (synthetic scenarios only)."""

    start_us: int
    end_us: int
    regime_id: int


@dataclass
class MultimodalObservation:
    window: TimeWindow
    metrics: list[MetricSample] = field(default_factory=list)
    spans: list[TraceSpan] = field(default_factory=list)
    logs: list[LogRecord] = field(default_factory=list)
    label: WindowLabel | None = None

    def components(self) -> list[str]:
        """Distinct component names present in any modality, sorted."""
        names = {m.component for m in self.metrics}
        names.update(s.component for s in self.spans)
        names.update(r.component for r in self.logs)
        return sorted(names)


@dataclass
class Corpus:
    observations: list[MultimodalObservation]
    window_len_us: int
    stride_us: int


def _decode(raw: bytes | str) -> str:
    if isinstance(raw, bytes):
        return raw.decode("utf-8")
    return raw


def parse_metrics(raw: bytes | str) -> list[MetricSample]:
    """Parse the metrics CSV (header ``ts_us,component,metric,value``)."""
    text = _decode(raw)
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or rows[0] != METRICS_HEADER:
        raise MalformedRow(1, "missing or wrong header")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise MalformedRow(i, f"expected 4 columns, got {len(row)}")
        ts_s, component, metric, value_s = row
        try:
            ts = int(ts_s)
            value = float(value_s)
        except ValueError as exc:
            raise MalformedRow(i, str(exc)) from exc
        if ts < 0:
            raise MalformedRow(i, "negative timestamp")
        if not math.isfinite(value):
            raise NonFiniteValue(i)
        if not component or not metric:
            raise MalformedRow(i, "empty component or metric name")
        out.append(MetricSample(ts, component, metric, value))
    return out


def parse_traces(raw: bytes | str) -> list[TraceSpan]:
    """Parse the spans JSONL file. Status strings are matched strictly."""
    text = _decode(raw)
    out = []
    seen: set[tuple[str, str]] = set()
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(i, "invalid JSON") from exc
        if not isinstance(obj, dict) or set(obj) != TRACE_KEYS:
            raise MalformedLine(i, "wrong key set")
        if obj["status"] not in SPAN_STATUSES:
            raise MalformedLine(i, f"bad status {obj['status']!r}")
        try:
            start = int(obj["start_us"])
            duration = int(obj["duration_us"])
        except (TypeError, ValueError) as exc:
            raise MalformedLine(i, "bad start_us/duration_us") from exc
        parent = obj["parent_span_id"]
        if parent is not None and not isinstance(parent, str):
            raise MalformedLine(i, "parent_span_id must be string or null")
        if not all(isinstance(obj[k], str) and obj[k]
                   for k in ("trace_id", "span_id", "component", "operation")):
            raise MalformedLine(i, "empty identifier field")
        if parent == obj["span_id"]:
            raise MalformedLine(i, "span is its own parent")
        if start < 0 or duration < 0:
            raise MalformedLine(i, "negative start or duration")
        key = (obj["trace_id"], obj["span_id"])
        if key in seen:
            raise DuplicateSpan(*key)
        seen.add(key)
        out.append(TraceSpan(obj["trace_id"], obj["span_id"], parent,
                             obj["component"], obj["operation"], start,
                             duration, obj["status"]))
    return out


def parse_logs(raw: bytes | str) -> list[LogRecord]:
    """Parse the log JSONL file; blank lines are skipped."""
    text = _decode(raw)
    out = []
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(i, "invalid JSON") from exc
        if not isinstance(obj, dict) or set(obj) != LOG_KEYS:
            raise MalformedLine(i, "wrong key set")
        try:
            ts = int(obj["ts_us"])
        except (TypeError, ValueError) as exc:
            raise MalformedLine(i, "bad ts_us") from exc
        if ts < 0:
            raise MalformedLine(i, "negative timestamp")
        if obj["level"] not in LOG_LEVELS:
            raise UnknownLevel(i, str(obj["level"]))
        if not isinstance(obj["component"], str) or not obj["component"]:
            raise MalformedLine(i, "empty component")
        message = obj["message"]
        if not isinstance(message, str) or not message.strip():
            raise MalformedLine(i, "empty message")
        out.append(LogRecord(ts, obj["component"], obj["level"], message))
    return out


def parse_fault_labels(raw: bytes | str) -> list[FaultInterval]:
    """Parse the fault-interval label JSONL file."""
    text = _decode(raw)
    keys = {"start_us", "end_us", "root_cause_component", "failure_type"}
    out = []
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(i, "invalid JSON") from exc
        if not isinstance(obj, dict) or set(obj) != keys:
            raise MalformedLine(i, "wrong key set")
        try:
            start, end = int(obj["start_us"]), int(obj["end_us"])
        except (TypeError, ValueError) as exc:
            raise MalformedLine(i, "bad interval bounds") from exc
        if start >= end:
            raise MalformedLine(i, "empty fault interval")
        out.append(FaultInterval(start, end, str(obj["root_cause_component"]),
                                 str(obj["failure_type"])))
    return out


# Serializers matching the parse_* formats exactly; parsing a written file
# returns the original records (round-trip identity).

def write_metrics_csv(samples: list[MetricSample]) -> str:
    lines = [",".join(METRICS_HEADER)]
    for m in samples:
        lines.append(f"{m.ts},{m.component},{m.metric_name},{m.value!r}")
    return "\n".join(lines) + "\n"


def write_traces_jsonl(spans: list[TraceSpan]) -> str:
    lines = []
    for s in spans:
        lines.append(json.dumps({
            "trace_id": s.trace_id, "span_id": s.span_id,
            "parent_span_id": s.parent_span_id, "component": s.component,
            "operation": s.operation, "start_us": s.start,
            "duration_us": s.duration_us, "status": s.status,
        }, separators=(",", ":")))
    return "\n".join(lines) + ("\n" if lines else "")


def write_logs_jsonl(records: list[LogRecord]) -> str:
    lines = []
    for r in records:
        lines.append(json.dumps({
            "ts_us": r.ts, "component": r.component,
            "level": r.level, "message": r.message,
        }, separators=(",", ":")))
    return "\n".join(lines) + ("\n" if lines else "")


def write_fault_labels_jsonl(faults: list[FaultInterval]) -> str:
    lines = []
    for f in faults:
        lines.append(json.dumps({
            "start_us": f.start_us, "end_us": f.end_us,
            "root_cause_component": f.root_cause_component,
            "failure_type": f.failure_type,
        }, separators=(",", ":")))
    return "\n".join(lines) + ("\n" if lines else "")


def _interval_overlap(a0: int, a1: int, b0: int, b1: int) -> int:
    return max(0, min(a1, b1) - max(a0, b0))


def overlap_ratio(w1: TimeWindow, w2: TimeWindow) -> float:
    """Jaccard overlap of two half-open windows, in [0, 1]."""
    inter = _interval_overlap(w1.start, w1.end, w2.start, w2.end)
    union = (w1.end - w1.start) + (w2.end - w2.start) - inter
    return inter / union


def _label_for_window(window: TimeWindow,
                      faults: list[FaultInterval] | None,
                      regimes: list[RegimeInterval] | None) -> WindowLabel | None:
    if faults is None and regimes is None:
        return None
    anomalous = False
    root = None
    ftype = None
    if faults is not None:
        # Any positive intersection marks the window anomalous; the interval
        # with the largest overlap supplies component/type (ties: earliest).
        best = 0
        for f in sorted(faults, key=lambda f: (f.start_us, f.end_us)):
            ov = _interval_overlap(window.start, window.end, f.start_us, f.end_us)
            if ov > 0:
                anomalous = True
                if ov > best:
                    best = ov
                    root, ftype = f.root_cause_component, f.failure_type
    regime_id = None
    if regimes is not None:
        best = 0
        for r in sorted(regimes, key=lambda r: (r.start_us, r.end_us)):
            ov = _interval_overlap(window.start, window.end, r.start_us, r.end_us)
            if ov > best:
                best = ov
                regime_id = r.regime_id
    return WindowLabel(anomalous, root, ftype, regime_id)


def build_windows(metrics: list[MetricSample],
                  spans: list[TraceSpan],
                  logs: list[LogRecord],
                  window_len_us: int,
                  stride_us: int,
                  labels: list[FaultInterval] | None = None,
                  regimes: list[RegimeInterval] | None = None) -> Corpus:
    """Group telemetry into a corpus of overlapping windows.

    Window starts sit on the stride grid (the grid origin is min_ts floored
    to a stride multiple), and run while start <= max_ts. Items belong to
    every window whose interval contains their timestamp (span: its start).
    Windows empty in all three modalities are dropped; window_id is the grid
    index so ids are stable under content changes elsewhere.
    """
    if window_len_us <= 0 or stride_us <= 0 or stride_us > window_len_us:
        raise InvalidWindowing(
            f"need 0 < stride ({stride_us}) <= window_len ({window_len_us})")

    metrics = sorted(metrics, key=lambda m: (m.ts, m.component, m.metric_name, m.value))
    spans = sorted(spans, key=lambda s: (s.start, s.trace_id, s.span_id))
    logs = sorted(logs, key=lambda r: (r.ts, r.component, r.level, r.message))

    all_ts = ([m.ts for m in metrics] + [s.start for s in spans]
              + [r.ts for r in logs])
    if not all_ts:
        return Corpus([], window_len_us, stride_us)
    min_ts, max_ts = min(all_ts), max(all_ts)

    m_ts = [m.ts for m in metrics]
    s_ts = [s.start for s in spans]
    l_ts = [r.ts for r in logs]

    import bisect

    t0 = (min_ts // stride_us) * stride_us
    observations = []
    k = 0
    start = t0
    while start <= max_ts:
        end = start + window_len_us
        window = TimeWindow(start, end, k)
        obs = MultimodalObservation(
            window=window,
            metrics=metrics[bisect.bisect_left(m_ts, start):bisect.bisect_left(m_ts, end)],
            spans=spans[bisect.bisect_left(s_ts, start):bisect.bisect_left(s_ts, end)],
            logs=logs[bisect.bisect_left(l_ts, start):bisect.bisect_left(l_ts, end)],
            label=_label_for_window(window, labels, regimes),
        )
        if obs.metrics or obs.spans or obs.logs:
            observations.append(obs)
        k += 1
        start = t0 + k * stride_us
    return Corpus(observations, window_len_us, stride_us)
