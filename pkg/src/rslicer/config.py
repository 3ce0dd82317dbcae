"""Flat key-value run configuration shared by every CLI stage.

File syntax: one ``key = value`` per line, ``#`` comments, blank lines
ignored. Unknown keys are rejected. Environment variables prefixed
``RSLICER_`` override file values (RSLICER_EPOCHS=5 sets ``epochs``), and a
``--seed`` flag overrides the configured seed last.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .embedding import BackboneConfig
from .errors import BadConfig
from .fusion import TrainConfig

ENV_PREFIX = "RSLICER_"


@dataclass
class RunConfig:
    window_len_us: int = 60_000_000
    stride_us: int = 30_000_000
    backbone_kind: str = "builtin_hash"
    backbone_dim: int = 512
    backbone_endpoint: str = ""
    backbone_model: str = ""
    backbone_timeout_s: float = 10.0
    backbone_retry: bool = True
    backbone_max_in_flight: int = 4
    backbone_chunk_size: int = 16
    tau: float = 0.07
    delta: float = 0.5
    gamma: float = 0.3
    lambda_modal: float = 1.0
    lambda_temp: float = 0.5
    lambda_anom: float = 0.5
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    dim_d: int = 128
    dim_h: int = 256
    seed: int = 0
    k_min: int = 2
    k_max: int = 6
    min_samples: int = 20
    quantile_q: float = 0.99
    split_fraction: float = 0.7
    synth_regimes: int = 3
    synth_faults: int = 12
    scenario_file: str = ""
    out_dir: str = "out"

    def validate(self) -> None:
        if self.window_len_us <= 0 or not 0 < self.stride_us <= self.window_len_us:
            raise BadConfig("need 0 < stride_us <= window_len_us")
        if self.k_min < 1 or self.k_max < self.k_min:
            raise BadConfig("need 1 <= k_min <= k_max")
        if self.min_samples < 0:
            raise BadConfig("min_samples must be >= 0")
        if not 0.0 < self.quantile_q <= 1.0:
            raise BadConfig("quantile_q must lie in (0, 1]")
        if not 0.0 <= self.split_fraction <= 1.0:
            raise BadConfig("split_fraction must lie in [0, 1]")
        if self.synth_regimes < 1 or self.synth_faults < 0:
            raise BadConfig("need synth_regimes >= 1 and synth_faults >= 0")
        self.backbone().validate()
        self.train_config().validate()

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(
            kind=self.backbone_kind,
            dim=self.backbone_dim,
            endpoint=self.backbone_endpoint,
            model=self.backbone_model,
            timeout_s=self.backbone_timeout_s,
            retry_on_timeout=self.backbone_retry,
            max_in_flight=self.backbone_max_in_flight,
            chunk_size=self.backbone_chunk_size,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            tau=self.tau, delta=self.delta, gamma=self.gamma,
            lambda_modal=self.lambda_modal, lambda_temp=self.lambda_temp,
            lambda_anom=self.lambda_anom, learning_rate=self.learning_rate,
            epochs=self.epochs, batch_size=self.batch_size,
            d=self.dim_d, h=self.dim_h, seed=self.seed,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as exc:
        raise BadConfig(f"bad value for {key}: {exc}") from exc


def parse_config_text(text: str) -> dict:
    out = {}
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise BadConfig(f"config line {i}: expected key = value")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise BadConfig(f"config line {i}: unknown key {key!r}")
        if key in out:
            raise BadConfig(f"config line {i}: duplicate key {key!r}")
        out[key] = _parse_value(key, value)
    return out


def _env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in _FIELD_TYPES:
            raise BadConfig(f"unknown config key in environment: {name}")
        out[key] = _parse_value(key, raw)
    return out


def load_config(path: str | None, seed_override: int | None = None,
                environ=None) -> RunConfig:
    values = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    values.update(_env_overrides(environ))
    cfg = RunConfig(**values)
    if seed_override is not None:
        cfg.seed = seed_override
    cfg.validate()
    return cfg
