"""Canonical textualization of each modality and the pluggable embedding
backbone that turns those texts into unit vectors.

The built-in backbone is a deterministic feature hasher (unigrams + bigrams,
signed counts, L2-normalized), so the whole pipeline runs offline and
reproducibly. The remote backbone speaks the common embedding-API shape
(POST ``{"model", "input"}`` -> ``{"data": [{"embedding": [...]}]}``).
"""

from __future__ import annotations

import hashlib
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    BadConfig,
    ComponentAbsent,
    EmptyTextEmbedding,
    RemoteDimensionMismatch,
    RemoteUnavailable,
)
from .telemetry import MultimodalObservation, TimeWindow, WindowLabel

_DIGIT_RUN = re.compile(r"\d+")


class Modality(str, Enum):
    M = "M"
    T = "T"
    L = "L"


@dataclass(frozen=True)
class ModalityText:
    modality: Modality
    text: str


@dataclass(frozen=True)
class BackboneEmbedding:
    vector: np.ndarray
    modality: Modality


@dataclass
class BackboneConfig:
    kind: str = "builtin_hash"          # "builtin_hash" | "remote"
    dim: int = 512                      # builtin only; power of two, >= 8
    endpoint: str = ""
    model: str = ""
    timeout_s: float = 10.0
    retry_on_timeout: bool = True
    max_in_flight: int = 4
    chunk_size: int = 16

    def validate(self) -> None:
        if self.kind not in ("builtin_hash", "remote"):
            raise BadConfig(f"unknown backbone kind {self.kind!r}")
        if self.kind == "builtin_hash":
            if self.dim < 8 or self.dim & (self.dim - 1) != 0:
                raise BadConfig("builtin backbone dim must be a power of two >= 8")
        else:
            if not self.endpoint:
                raise BadConfig("remote backbone requires an endpoint")


@dataclass
class WindowEmbedding:
    """Backbone triple for one window, the unit fed to fusion training."""

    window: TimeWindow
    label: WindowLabel | None
    e_m: np.ndarray
    e_t: np.ndarray
    e_l: np.ndarray

    @property
    def window_id(self) -> int:
        return self.window.window_id


def log_template(message: str) -> str:
    """Mask maximal digit runs so count-equivalent messages collapse."""
    return _DIGIT_RUN.sub("<NUM>", message.strip())


def _p95_nearest_rank(values: list[int]) -> float:
    ordered = sorted(values)
    rank = math.ceil(0.95 * len(ordered))
    return float(ordered[rank - 1])


def textualize(obs: MultimodalObservation, modality: Modality) -> ModalityText:
    """Render one modality of a window as a canonical, order-insensitive
    string: summary statistics for metrics and traces, templated counts for
    logs. An empty modality renders the sentinel ``<empty:X>``.
    """
    lines: list[str] = []
    if modality is Modality.M:
        groups: dict[tuple[str, str], list] = {}
        for m in sorted(obs.metrics, key=lambda m: (m.ts, m.component, m.metric_name, m.value)):
            groups.setdefault((m.component, m.metric_name), []).append(m)
        for (comp, name), items in groups.items():
            vals = [it.value for it in items]
            lines.append(
                f"{comp} {name} n={len(vals)} mean={sum(vals) / len(vals):.4f} "
                f"min={min(vals):.4f} max={max(vals):.4f} last={vals[-1]:.4f}")
    elif modality is Modality.T:
        sgroups: dict[tuple[str, str], list] = {}
        for s in obs.spans:
            sgroups.setdefault((s.component, s.operation), []).append(s)
        for (comp, op), items in sgroups.items():
            durs = [s.duration_us for s in items]
            errs = sum(1 for s in items if s.status == "error")
            lines.append(
                f"{comp} {op} n={len(items)} err={errs} "
                f"lat_mean={sum(durs) / len(durs):.4f} lat_p95={_p95_nearest_rank(durs):.4f}")
    elif modality is Modality.L:
        counts: dict[tuple[str, str, str], int] = {}
        for r in obs.logs:
            key = (r.component, r.level, log_template(r.message))
            counts[key] = counts.get(key, 0) + 1
        for (comp, level, template), n in counts.items():
            lines.append(f"{comp} {level} n={n} {template}")
    else:
        raise ValueError(f"unknown modality {modality!r}")

    if not lines:
        return ModalityText(modality, f"<empty:{modality.value}>")
    return ModalityText(modality, "\n".join(sorted(lines)))


def _token_hash(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def hash_embed(text: str, dim: int) -> np.ndarray:
    """Signed feature hashing of whitespace tokens plus adjacent bigrams.

    Index is the hash modulo dim (low bits), sign comes from hash bit 63;
    the accumulated counts are L2-normalized.
    """
    tokens = text.split()
    if not tokens:
        raise EmptyTextEmbedding("cannot embed empty text")
    vec = np.zeros(dim)
    feats = tokens + [f"{tokens[i]} {tokens[i + 1]}" for i in range(len(tokens) - 1)]
    for feat in feats:
        h = _token_hash(feat)
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        vec[h % dim] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise EmptyTextEmbedding("all hashed features cancelled")
    return vec / norm


class HashBackbone:
    """Offline deterministic stand-in for a pre-trained text embedder."""

    def __init__(self, dim: int):
        self.dim = dim

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        return [hash_embed(t, self.dim) for t in texts]


class RemoteBackbone:
    """Client for an embedding service; enforces one output dimension per run
    and bounds in-flight requests.
    """

    def __init__(self, cfg: BackboneConfig):
        self.cfg = cfg
        self._dim: int | None = None

    def _post_chunk(self, texts: list[str]) -> list[np.ndarray]:
        import requests

        payload = {"model": self.cfg.model, "input": texts}
        attempts = 2 if self.cfg.retry_on_timeout else 1
        last_exc: Exception | None = None
        for _ in range(attempts):
            try:
                resp = requests.post(self.cfg.endpoint, json=payload,
                                     timeout=self.cfg.timeout_s)
                break
            except requests.Timeout as exc:
                last_exc = exc
                continue
            except requests.RequestException as exc:
                raise RemoteUnavailable(f"request failed: {exc}") from exc
        else:
            raise RemoteUnavailable(f"timed out after {attempts} attempts: {last_exc}")
        if resp.status_code != 200:
            raise RemoteUnavailable(f"HTTP {resp.status_code} from embedding service")
        try:
            data = resp.json()["data"]
            vectors = [np.asarray(item["embedding"], dtype=float) for item in data]
        except (KeyError, TypeError, ValueError) as exc:
            raise RemoteUnavailable(f"malformed response: {exc}") from exc
        if len(vectors) != len(texts):
            raise RemoteUnavailable("response count does not match input count")
        out = []
        for v in vectors:
            if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)):
                raise RemoteUnavailable("non-finite or empty embedding in response")
            if self._dim is None:
                self._dim = int(v.size)
            elif v.size != self._dim:
                raise RemoteDimensionMismatch(
                    f"expected dim {self._dim}, got {v.size}")
            norm = float(np.linalg.norm(v))
            if norm == 0.0:
                raise RemoteUnavailable("zero vector in response")
            out.append(v / norm)
        return out

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        chunks = [texts[i:i + self.cfg.chunk_size]
                  for i in range(0, len(texts), self.cfg.chunk_size)]
        if not chunks:
            return []
        if len(chunks) == 1:
            return self._post_chunk(chunks[0])
        results: list[list[np.ndarray]] = [[] for _ in chunks]
        with ThreadPoolExecutor(max_workers=self.cfg.max_in_flight) as pool:
            futures = {pool.submit(self._post_chunk, c): i for i, c in enumerate(chunks)}
            for fut, idx in futures.items():
                results[idx] = fut.result()
        return [v for chunk in results for v in chunk]


def build_backbone(cfg: BackboneConfig):
    cfg.validate()
    if cfg.kind == "builtin_hash":
        return HashBackbone(cfg.dim)
    return RemoteBackbone(cfg)


def embed_text(cfg: BackboneConfig, mt: ModalityText) -> BackboneEmbedding:
    backbone = build_backbone(cfg)
    (vec,) = backbone.embed_texts([mt.text])
    return BackboneEmbedding(vec, mt.modality)


def embed_window(cfg: BackboneConfig, obs: MultimodalObservation,
                 backbone=None) -> tuple[BackboneEmbedding, BackboneEmbedding, BackboneEmbedding]:
    backbone = backbone or build_backbone(cfg)
    texts = [textualize(obs, m).text for m in (Modality.M, Modality.T, Modality.L)]
    e_m, e_t, e_l = backbone.embed_texts(texts)
    return (BackboneEmbedding(e_m, Modality.M),
            BackboneEmbedding(e_t, Modality.T),
            BackboneEmbedding(e_l, Modality.L))


def embed_corpus(cfg: BackboneConfig, observations: list[MultimodalObservation]) -> list[WindowEmbedding]:
    """Embed every window; remote backbones see one flat batched text list."""
    backbone = build_backbone(cfg)
    texts = []
    for obs in observations:
        for m in (Modality.M, Modality.T, Modality.L):
            texts.append(textualize(obs, m).text)
    vectors = backbone.embed_texts(texts)
    out = []
    for i, obs in enumerate(observations):
        e_m, e_t, e_l = vectors[3 * i:3 * i + 3]
        out.append(WindowEmbedding(obs.window, obs.label, e_m, e_t, e_l))
    return out


def filter_to_component(obs: MultimodalObservation, component: str) -> MultimodalObservation:
    """Restrict a window to one component's items (for sub-embeddings)."""
    filtered = MultimodalObservation(
        window=obs.window,
        metrics=[m for m in obs.metrics if m.component == component],
        spans=[s for s in obs.spans if s.component == component],
        logs=[r for r in obs.logs if r.component == component],
        label=obs.label,
    )
    if not (filtered.metrics or filtered.spans or filtered.logs):
        raise ComponentAbsent(f"component {component!r} absent from window "
                              f"{obs.window.window_id}")
    return filtered
