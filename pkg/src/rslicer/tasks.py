"""State-conditioned task models tuned per runtime-state cluster, with a
global fallback for clusters that have too few training samples.

* anomaly detection: diagonal Gaussian per cluster over normal windows,
  verdict by a quantile threshold of training scores;
* failure localization: per-(cluster, component) profiles of component
  sub-embeddings; suspicion is distance from profile;
* failure classification: per-(cluster, failure type) prototypes of
  centroid-relative encodings, nearest prototype by cosine.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .embedding import (
    BackboneConfig,
    build_backbone,
    embed_window,
    filter_to_component,
)
from .errors import (
    DimensionMismatch,
    NoNormalData,
    NoPrototypes,
    PartitionMismatch,
)
from .fusion import FusionParams, SystemStateEmbedding, cosine_sim, fuse
from .states import StatePartition, assign, assign_all
from .telemetry import MultimodalObservation

DEFAULT_MIN_SAMPLES = 20
DEFAULT_QUANTILE = 0.99
VAR_FLOOR = 1e-6


def partition_checksum(part: StatePartition) -> str:
    """Stable digest tying a task bundle to the partition it was tuned on."""
    h = hashlib.sha256()
    h.update(str(part.k).encode())
    h.update(np.ascontiguousarray(part.centroids, dtype=np.float64).tobytes())
    h.update(str(part.seed).encode())
    return h.hexdigest()


def _check_partition(bundle_checksum: str, part: StatePartition) -> None:
    if bundle_checksum != partition_checksum(part):
        raise PartitionMismatch("bundle was tuned against a different partition")


def _quantile_nearest_rank(scores: list[float], q: float) -> float:
    ordered = sorted(scores)
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


def _normal_states(states: list[SystemStateEmbedding]) -> list[SystemStateEmbedding]:
    return [s for s in states if s.label is not None and not s.label.anomalous]


@dataclass
class AnomalyModel:
    mean: np.ndarray
    var: np.ndarray          # per-dimension, floored at VAR_FLOOR
    threshold: float


@dataclass
class AnomalyBundle:
    cluster_models: dict[int, AnomalyModel]
    global_model: AnomalyModel
    min_samples: int
    quantile_q: float
    partition_checksum: str

    def resolve(self, cluster: int) -> AnomalyModel:
        return self.cluster_models.get(cluster, self.global_model)


def _gaussian_score(model: AnomalyModel, vec: np.ndarray) -> float:
    if vec.shape != model.mean.shape:
        raise DimensionMismatch("embedding dim does not match anomaly model")
    return float((((vec - model.mean) ** 2) / model.var).sum())


def _fit_gaussian(vectors: np.ndarray, q: float) -> AnomalyModel:
    mean = vectors.mean(axis=0)
    var = np.maximum(vectors.var(axis=0), VAR_FLOOR)
    model = AnomalyModel(mean, var, 0.0)
    model.threshold = _quantile_nearest_rank(
        [_gaussian_score(model, v) for v in vectors], q)
    return model


def tune_anomaly(part: StatePartition, states: list[SystemStateEmbedding],
                 min_samples: int = DEFAULT_MIN_SAMPLES,
                 q: float = DEFAULT_QUANTILE) -> AnomalyBundle:
    normals = _normal_states(states)
    if not normals:
        raise NoNormalData("anomaly tuning needs at least one normal window")
    vectors = np.stack([s.vector for s in normals])
    assignment = assign_all(part, normals)
    global_model = _fit_gaussian(vectors, q)
    cluster_models = {}
    for k in range(part.k):
        members = vectors[assignment == k]
        if len(members) >= min_samples:
            cluster_models[k] = _fit_gaussian(members, q)
    return AnomalyBundle(cluster_models, global_model, min_samples, q,
                         partition_checksum(part))


def score_anomaly(bundle: AnomalyBundle, part: StatePartition,
                  z: SystemStateEmbedding | np.ndarray) -> tuple[float, bool]:
    """Squared Mahalanobis distance (diagonal) under the assigned cluster's
    model; verdict is score strictly above that model's threshold.
    """
    _check_partition(bundle.partition_checksum, part)
    vec = z.vector if isinstance(z, SystemStateEmbedding) else np.asarray(z)
    model = bundle.resolve(assign(part, vec))
    score = _gaussian_score(model, vec)
    return score, score > model.threshold


def component_subembedding(backbone_cfg: BackboneConfig,
                           fusion_params: FusionParams,
                           obs: MultimodalObservation,
                           component: str,
                           backbone=None) -> np.ndarray:
    """Embed the window restricted to one component through the identical
    textualize -> backbone -> fuse pipeline.
    """
    filtered = filter_to_component(obs, component)
    e_m, e_t, e_l = embed_window(backbone_cfg, filtered, backbone=backbone)
    return fuse(fusion_params, e_m, e_t, e_l)


def _window_embedding(backbone_cfg, fusion_params, obs, backbone=None) -> np.ndarray:
    e_m, e_t, e_l = embed_window(backbone_cfg, obs, backbone=backbone)
    return fuse(fusion_params, e_m, e_t, e_l)


@dataclass
class LocalizerModel:
    profiles: dict[str, np.ndarray]    # component -> unit profile vector


@dataclass
class LocalizerBundle:
    cluster_models: dict[int, LocalizerModel]
    global_model: LocalizerModel
    min_samples: int
    partition_checksum: str

    def resolve(self, cluster: int) -> LocalizerModel:
        return self.cluster_models.get(cluster, self.global_model)


def _mean_profiles(acc: dict[str, list[np.ndarray]]) -> dict[str, np.ndarray]:
    out = {}
    for comp, vecs in acc.items():
        mean = np.mean(vecs, axis=0)
        norm = float(np.linalg.norm(mean))
        if norm > 0:
            out[comp] = mean / norm
    return out


def tune_localizer(backbone_cfg: BackboneConfig, fusion_params: FusionParams,
                   part: StatePartition, states: list[SystemStateEmbedding],
                   observations: list[MultimodalObservation],
                   min_samples: int = DEFAULT_MIN_SAMPLES) -> LocalizerBundle:
    """Fit per-(cluster, component) normal-behavior profiles from component
    sub-embeddings of normal windows.
    """
    normals = _normal_states(states)
    if not normals:
        raise NoNormalData("localizer tuning needs at least one normal window")
    by_id = {obs.window.window_id: obs for obs in observations}
    assignment = assign_all(part, normals)
    backbone = build_backbone(backbone_cfg)

    global_acc: dict[str, list[np.ndarray]] = {}
    cluster_acc: dict[int, dict[str, list[np.ndarray]]] = {}
    cluster_counts: dict[int, int] = {}
    for s, k in zip(normals, assignment):
        obs = by_id.get(s.window_id)
        if obs is None:
            continue
        k = int(k)
        cluster_counts[k] = cluster_counts.get(k, 0) + 1
        for comp in obs.components():
            sub = component_subembedding(backbone_cfg, fusion_params, obs,
                                         comp, backbone=backbone)
            global_acc.setdefault(comp, []).append(sub)
            cluster_acc.setdefault(k, {}).setdefault(comp, []).append(sub)

    global_model = LocalizerModel(_mean_profiles(global_acc))
    cluster_models = {
        k: LocalizerModel(_mean_profiles(acc))
        for k, acc in cluster_acc.items()
        if cluster_counts.get(k, 0) >= min_samples
    }
    return LocalizerBundle(cluster_models, global_model, min_samples,
                           partition_checksum(part))


def localize(bundle: LocalizerBundle, part: StatePartition,
             obs: MultimodalObservation, backbone_cfg: BackboneConfig,
             fusion_params: FusionParams) -> list[tuple[str, float]]:
    """Rank the window's components by suspicion: 1 - cosine(sub-embedding,
    profile), with unprofiled components maximally suspicious at 1.0.
    Ties break lexicographically.
    """
    _check_partition(bundle.partition_checksum, part)
    backbone = build_backbone(backbone_cfg)
    z = _window_embedding(backbone_cfg, fusion_params, obs, backbone=backbone)
    model = bundle.resolve(assign(part, z))
    scored = []
    for comp in obs.components():
        profile = model.profiles.get(comp)
        if profile is None:
            score = 1.0
        else:
            sub = component_subembedding(backbone_cfg, fusion_params, obs,
                                         comp, backbone=backbone)
            score = 1.0 - cosine_sim(sub, profile)
        scored.append((comp, score))
    scored.sort(key=lambda cs: (-cs[1], cs[0]))
    return scored


@dataclass
class ClassifierModel:
    prototypes: dict[str, np.ndarray]  # failure type -> unit prototype


@dataclass
class ClassifierBundle:
    cluster_models: dict[int, ClassifierModel]
    global_model: ClassifierModel
    min_samples: int
    partition_checksum: str
    types: list[str] = field(default_factory=list)

    def resolve(self, cluster: int) -> ClassifierModel:
        return self.cluster_models.get(cluster, self.global_model)


def tune_classifier(part: StatePartition, states: list[SystemStateEmbedding],
                    min_samples: int = DEFAULT_MIN_SAMPLES) -> ClassifierBundle:
    """Fit per-(cluster, failure type) prototypes: the re-normalized mean of
    centroid-relative encodings z - mu_k of labeled failure windows.
    """
    faults = [s for s in states
              if s.label is not None and s.label.anomalous
              and s.label.failure_type]
    if not faults:
        raise NoPrototypes("classifier tuning needs labeled failure windows")
    assignment = assign_all(part, faults)

    global_acc: dict[str, list[np.ndarray]] = {}
    cluster_acc: dict[int, dict[str, list[np.ndarray]]] = {}
    cluster_counts: dict[int, int] = {}
    for s, k in zip(faults, assignment):
        k = int(k)
        r = s.vector - part.centroids[k]
        ftype = s.label.failure_type
        global_acc.setdefault(ftype, []).append(r)
        cluster_acc.setdefault(k, {}).setdefault(ftype, []).append(r)
        cluster_counts[k] = cluster_counts.get(k, 0) + 1

    global_protos = _mean_profiles(global_acc)
    if not global_protos:
        raise NoPrototypes("all failure-type prototypes degenerated to zero")
    cluster_models = {
        k: ClassifierModel(_mean_profiles(acc))
        for k, acc in cluster_acc.items()
        if cluster_counts.get(k, 0) >= min_samples
    }
    return ClassifierBundle(cluster_models, ClassifierModel(global_protos),
                            min_samples, partition_checksum(part),
                            sorted(global_acc))


def classify_ranked(bundle: ClassifierBundle, part: StatePartition,
                    z: SystemStateEmbedding | np.ndarray) -> list[tuple[str, float]]:
    """All known failure types ranked by prototype similarity of the
    centroid-relative encoding (descending; ties lexicographic).
    """
    _check_partition(bundle.partition_checksum, part)
    vec = z.vector if isinstance(z, SystemStateEmbedding) else np.asarray(z)
    k = assign(part, vec)
    r = vec - part.centroids[k]
    norm = float(np.linalg.norm(r))
    model = bundle.resolve(k)
    ranked = []
    for ftype in bundle.types:
        proto = model.prototypes.get(ftype)
        if proto is None:
            proto = bundle.global_model.prototypes.get(ftype)
        if proto is None or norm == 0.0:
            sim = 0.0  # degenerate encodings tie; lexicographic order decides
        else:
            sim = float(np.dot(r / norm, proto))
        ranked.append((ftype, sim))
    if not ranked:
        raise NoPrototypes("classifier bundle has no prototypes")
    ranked.sort(key=lambda ts: (-ts[1], ts[0]))
    return ranked


def classify(bundle: ClassifierBundle, part: StatePartition,
             z: SystemStateEmbedding | np.ndarray) -> str:
    return classify_ranked(bundle, part, z)[0][0]
