"""Versioned JSON artifacts for every pipeline stage.

Floats are emitted through Python's shortest round-trip repr, so
load(save(x)) is bit-exact for 64-bit values; rerunning a stage with the
same inputs produces byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .embedding import WindowEmbedding
from .errors import BadArtifact
from .fusion import FusionParams, SystemStateEmbedding, TrainConfig
from .metrics import EvalReport
from .states import StatePartition
from .synthgen import (
    ComponentBaseline,
    FaultSpec,
    RegimeSpec,
    ScenarioConfig,
    ScheduleEntry,
)
from .tasks import (
    AnomalyBundle,
    AnomalyModel,
    ClassifierBundle,
    ClassifierModel,
    LocalizerBundle,
    LocalizerModel,
)
from .telemetry import (
    Corpus,
    LogRecord,
    MetricSample,
    MultimodalObservation,
    TimeWindow,
    TraceSpan,
    WindowLabel,
)

VERSION = 1


def dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n"


def save(path: str, obj: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))


def load(path: str, kind: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise BadArtifact(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("kind") != kind:
        raise BadArtifact(f"{path}: expected a {kind!r} artifact")
    if obj.get("version") != VERSION:
        raise BadArtifact(f"{path}: unknown version {obj.get('version')!r}")
    return obj


def _label_to_json(label: WindowLabel | None):
    if label is None:
        return None
    return {"anomalous": label.anomalous,
            "root_cause_component": label.root_cause_component,
            "failure_type": label.failure_type,
            "regime_id": label.regime_id}


def _label_from_json(obj) -> WindowLabel | None:
    if obj is None:
        return None
    return WindowLabel(bool(obj["anomalous"]), obj["root_cause_component"],
                       obj["failure_type"], obj["regime_id"])


def _window_to_json(w: TimeWindow) -> dict:
    return {"id": w.window_id, "start": w.start, "end": w.end}


def _window_from_json(obj) -> TimeWindow:
    return TimeWindow(int(obj["start"]), int(obj["end"]), int(obj["id"]))


# --- corpus ---

def corpus_to_json(corpus: Corpus) -> dict:
    observations = []
    for obs in corpus.observations:
        observations.append({
            "window": _window_to_json(obs.window),
            "metrics": [[m.ts, m.component, m.metric_name, m.value]
                        for m in obs.metrics],
            "spans": [[s.trace_id, s.span_id, s.parent_span_id, s.component,
                       s.operation, s.start, s.duration_us, s.status]
                      for s in obs.spans],
            "logs": [[r.ts, r.component, r.level, r.message] for r in obs.logs],
            "label": _label_to_json(obs.label),
        })
    return {"version": VERSION, "kind": "corpus",
            "window_len_us": corpus.window_len_us,
            "stride_us": corpus.stride_us,
            "observations": observations}


def corpus_from_json(obj: dict) -> Corpus:
    observations = []
    for o in obj["observations"]:
        observations.append(MultimodalObservation(
            window=_window_from_json(o["window"]),
            metrics=[MetricSample(int(m[0]), m[1], m[2], float(m[3]))
                     for m in o["metrics"]],
            spans=[TraceSpan(s[0], s[1], s[2], s[3], s[4], int(s[5]),
                             int(s[6]), s[7]) for s in o["spans"]],
            logs=[LogRecord(int(r[0]), r[1], r[2], r[3]) for r in o["logs"]],
            label=_label_from_json(o["label"]),
        ))
    return Corpus(observations, int(obj["window_len_us"]), int(obj["stride_us"]))


# --- backbone embeddings ---

def embeddings_to_json(windows: list[WindowEmbedding], backbone_kind: str,
                       dim: int) -> dict:
    return {"version": VERSION, "kind": "embeddings",
            "backbone_kind": backbone_kind, "dim": dim,
            "windows": [{
                "window": _window_to_json(w.window),
                "label": _label_to_json(w.label),
                "e_m": w.e_m.tolist(), "e_t": w.e_t.tolist(),
                "e_l": w.e_l.tolist(),
            } for w in windows]}


def embeddings_from_json(obj: dict) -> list[WindowEmbedding]:
    return [WindowEmbedding(
        window=_window_from_json(w["window"]),
        label=_label_from_json(w["label"]),
        e_m=np.asarray(w["e_m"], dtype=float),
        e_t=np.asarray(w["e_t"], dtype=float),
        e_l=np.asarray(w["e_l"], dtype=float),
    ) for w in obj["windows"]]


# --- fusion model ---

def model_to_json(params: FusionParams, cfg: TrainConfig) -> dict:
    d_b, d, h = params.dims
    return {"version": VERSION, "kind": "fusion-model",
            "dims": {"d_b": d_b, "d": d, "h": h},
            "train_config": asdict(cfg),
            "seed": cfg.seed,
            "matrices": {name: getattr(params, name).tolist()
                         for name in ("p_m", "p_t", "p_l", "w_g", "b_g",
                                      "w_1", "b_1", "w_2", "b_2")}}


def model_from_json(obj: dict) -> tuple[FusionParams, TrainConfig]:
    m = obj["matrices"]
    params = FusionParams(*(np.asarray(m[name], dtype=float)
                            for name in ("p_m", "p_t", "p_l", "w_g", "b_g",
                                         "w_1", "b_1", "w_2", "b_2")))
    cfg = TrainConfig(**obj["train_config"])
    return params, cfg


# --- system-state embeddings ---

def states_to_json(states: list[SystemStateEmbedding]) -> dict:
    return {"version": VERSION, "kind": "states",
            "dim": int(states[0].vector.shape[0]) if states else 0,
            "windows": [{
                "window": _window_to_json(s.window),
                "label": _label_to_json(s.label),
                "vector": s.vector.tolist(),
            } for s in states]}


def states_from_json(obj: dict) -> list[SystemStateEmbedding]:
    return [SystemStateEmbedding(
        vector=np.asarray(s["vector"], dtype=float),
        window=_window_from_json(s["window"]),
        label=_label_from_json(s["label"]),
    ) for s in obj["windows"]]


# --- partition ---

def partition_to_json(part: StatePartition) -> dict:
    return {"version": VERSION, "kind": "partition",
            "k": part.k,
            "centroids": part.centroids.tolist(),
            "sizes": part.sizes,
            "silhouette_by_k": {str(k): v for k, v in sorted(part.silhouette_by_k.items())},
            "seed": part.seed}


def partition_from_json(obj: dict) -> StatePartition:
    return StatePartition(
        k=int(obj["k"]),
        centroids=np.asarray(obj["centroids"], dtype=float),
        sizes=[int(s) for s in obj["sizes"]],
        silhouette_by_k={int(k): float(v) for k, v in obj["silhouette_by_k"].items()},
        seed=int(obj["seed"]),
    )


# --- task bundles ---

def _anomaly_model_to_json(m: AnomalyModel) -> dict:
    return {"mean": m.mean.tolist(), "var": m.var.tolist(),
            "threshold": m.threshold}


def _anomaly_model_from_json(obj) -> AnomalyModel:
    return AnomalyModel(np.asarray(obj["mean"], dtype=float),
                        np.asarray(obj["var"], dtype=float),
                        float(obj["threshold"]))


def _profiles_to_json(profiles: dict[str, np.ndarray]) -> dict:
    return {name: vec.tolist() for name, vec in sorted(profiles.items())}


def _profiles_from_json(obj) -> dict[str, np.ndarray]:
    return {name: np.asarray(vec, dtype=float) for name, vec in obj.items()}


def bundle_to_json(bundle: AnomalyBundle | LocalizerBundle | ClassifierBundle,
                   part: StatePartition) -> dict:
    base = {"version": VERSION, "kind": "task-bundle",
            "min_samples": bundle.min_samples,
            "partition_checksum": bundle.partition_checksum,
            "partition": partition_to_json(part)}
    if isinstance(bundle, AnomalyBundle):
        base["task"] = "ad"
        base["quantile_q"] = bundle.quantile_q
        base["cluster_models"] = {str(k): _anomaly_model_to_json(m)
                                  for k, m in sorted(bundle.cluster_models.items())}
        base["global_model"] = _anomaly_model_to_json(bundle.global_model)
    elif isinstance(bundle, LocalizerBundle):
        base["task"] = "loc"
        base["cluster_models"] = {str(k): _profiles_to_json(m.profiles)
                                  for k, m in sorted(bundle.cluster_models.items())}
        base["global_model"] = _profiles_to_json(bundle.global_model.profiles)
    elif isinstance(bundle, ClassifierBundle):
        base["task"] = "cls"
        base["types"] = bundle.types
        base["cluster_models"] = {str(k): _profiles_to_json(m.prototypes)
                                  for k, m in sorted(bundle.cluster_models.items())}
        base["global_model"] = _profiles_to_json(bundle.global_model.prototypes)
    else:
        raise BadArtifact(f"unknown bundle type {type(bundle).__name__}")
    return base


def bundle_from_json(obj: dict):
    """Returns (bundle, partition) for the task stored in the artifact."""
    part = partition_from_json(obj["partition"])
    task = obj.get("task")
    min_samples = int(obj["min_samples"])
    checksum = obj["partition_checksum"]
    if task == "ad":
        bundle = AnomalyBundle(
            cluster_models={int(k): _anomaly_model_from_json(m)
                            for k, m in obj["cluster_models"].items()},
            global_model=_anomaly_model_from_json(obj["global_model"]),
            min_samples=min_samples,
            quantile_q=float(obj["quantile_q"]),
            partition_checksum=checksum,
        )
    elif task == "loc":
        bundle = LocalizerBundle(
            cluster_models={int(k): LocalizerModel(_profiles_from_json(m))
                            for k, m in obj["cluster_models"].items()},
            global_model=LocalizerModel(_profiles_from_json(obj["global_model"])),
            min_samples=min_samples,
            partition_checksum=checksum,
        )
    elif task == "cls":
        bundle = ClassifierBundle(
            cluster_models={int(k): ClassifierModel(_profiles_from_json(m))
                            for k, m in obj["cluster_models"].items()},
            global_model=ClassifierModel(_profiles_from_json(obj["global_model"])),
            min_samples=min_samples,
            partition_checksum=checksum,
            types=list(obj["types"]),
        )
    else:
        raise BadArtifact(f"unknown task {task!r} in bundle")
    return bundle, part


# --- eval report ---

def report_to_json(report: EvalReport) -> dict:
    return {"version": VERSION, "kind": "report", "task": report.task,
            "precision": report.precision, "recall": report.recall,
            "f1": report.f1, "mrr": report.mrr,
            "tp": report.tp, "fp": report.fp, "fn": report.fn, "n": report.n}


def report_from_json(obj: dict) -> EvalReport:
    return EvalReport(obj["task"], float(obj["precision"]), float(obj["recall"]),
                      float(obj["f1"]),
                      None if obj["mrr"] is None else float(obj["mrr"]),
                      int(obj["tp"]), int(obj["fp"]), int(obj["fn"]), int(obj["n"]))


# --- scenario config ---

def scenario_to_json(cfg: ScenarioConfig) -> dict:
    return {"version": VERSION, "kind": "scenario",
            "components": cfg.components,
            "edges": [[a, b] for a, b in cfg.edges],
            "regimes": [{
                "regime_id": r.regime_id, "name": r.name,
                "baselines": {c: asdict(b) for c, b in sorted(r.baselines.items())},
            } for r in cfg.regimes],
            "schedule": [asdict(e) for e in cfg.schedule],
            "faults": [asdict(f) for f in cfg.faults],
            "duration_us": cfg.duration_us,
            "seed": cfg.seed,
            "noise_sigma": cfg.noise_sigma,
            "switch_quiet_s": cfg.switch_quiet_s}


def scenario_from_json(obj: dict) -> ScenarioConfig:
    return ScenarioConfig(
        components=list(obj["components"]),
        edges=[(a, b) for a, b in obj["edges"]],
        regimes=[RegimeSpec(int(r["regime_id"]), r["name"],
                            {c: ComponentBaseline(**b)
                             for c, b in r["baselines"].items()})
                 for r in obj["regimes"]],
        schedule=[ScheduleEntry(**e) for e in obj["schedule"]],
        faults=[FaultSpec(**f) for f in obj["faults"]],
        duration_us=int(obj["duration_us"]),
        seed=int(obj["seed"]),
        noise_sigma=float(obj["noise_sigma"]),
        switch_quiet_s=int(obj["switch_quiet_s"]),
    )
