"""Extractor descriptors, layer selection and feature records."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import ConfigError, NonFiniteFeatures
from ..utils import digest

FAMILIES = ("ssl_sequence", "handcrafted_vector", "synthetic")
LAYER_MODES = ("last_hidden", "index", "all_layers", "fixed_vector")


@dataclass(frozen=True)
class ExtractorSpec:
    extractor_id: str
    family: str
    hidden_dim: int
    num_layers: int = 0
    checkpoint_ref: str = ""
    input_rate_hz: int = 16000
    version_hash: str = ""
    adapter: str = ""
    frame_rate_hz: float = 50.0
    options: Mapping[str, object] = field(default_factory=dict)
    info: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"{self.extractor_id}: unknown family {self.family!r}")
        if int(self.hidden_dim) <= 0:
            raise ConfigError(f"{self.extractor_id}: hidden_dim must be > 0")
        if self.is_sequence and int(self.num_layers) < 1:
            raise ConfigError(f"{self.extractor_id}: sequence extractors need num_layers >= 1")
        if not self.adapter:
            default = {"ssl_sequence": "huggingface", "handcrafted_vector": "opensmile_csv",
                       "synthetic": "synthetic"}[self.family]
            object.__setattr__(self, "adapter", default)

    @property
    def is_sequence(self) -> bool:
        if self.family == "synthetic":
            return self.options.get("output", "sequence") == "sequence"
        return self.family == "ssl_sequence"

    @property
    def is_vector(self) -> bool:
        return not self.is_sequence

    def binding(self) -> dict:
        return {"extractor_id": self.extractor_id, "version_hash": self.version_hash}

    def to_dict(self) -> dict:
        return {
            "extractor_id": self.extractor_id, "family": self.family,
            "hidden_dim": int(self.hidden_dim), "num_layers": int(self.num_layers),
            "checkpoint_ref": self.checkpoint_ref, "input_rate_hz": int(self.input_rate_hz),
            "version_hash": self.version_hash, "adapter": self.adapter,
            "frame_rate_hz": float(self.frame_rate_hz), "options": dict(self.options),
            "info": dict(self.info),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExtractorSpec":
        return cls(
            extractor_id=d["extractor_id"], family=d["family"], hidden_dim=int(d["hidden_dim"]),
            num_layers=int(d.get("num_layers") or 0), checkpoint_ref=d.get("checkpoint_ref", ""),
            input_rate_hz=int(d.get("input_rate_hz", 16000)), version_hash=d.get("version_hash", ""),
            adapter=d.get("adapter", ""), frame_rate_hz=float(d.get("frame_rate_hz", 50.0)),
            options=dict(d.get("options") or {}), info=dict(d.get("info") or {}),
        )


@dataclass(frozen=True)
class LayerSpec:
    mode: str
    index: int | None = None

    def __post_init__(self):
        if self.mode not in LAYER_MODES:
            raise ConfigError(f"unknown layer mode {self.mode!r}")
        if (self.mode == "index") != (self.index is not None):
            raise ConfigError("index(k) layer specs carry exactly one integer k")

    @classmethod
    def last(cls) -> "LayerSpec":
        return cls("last_hidden")

    @classmethod
    def all(cls) -> "LayerSpec":
        return cls("all_layers")

    @classmethod
    def at(cls, k: int) -> "LayerSpec":
        return cls("index", int(k))

    @classmethod
    def vector(cls) -> "LayerSpec":
        return cls("fixed_vector")

    @classmethod
    def parse(cls, text) -> "LayerSpec":
        if isinstance(text, LayerSpec):
            return text
        t = str(text).strip().lower()
        if t in ("last", "last_hidden"):
            return cls.last()
        if t in ("all", "all_layers", "fusion"):
            return cls.all()
        if t in ("vector", "fixed_vector"):
            return cls.vector()
        if t.startswith("index(") and t.endswith(")"):
            t = t[6:-1]
        try:
            return cls.at(int(t))
        except ValueError:
            raise ConfigError(f"cannot parse layer spec {text!r}") from None

    def __str__(self) -> str:
        return f"index({self.index})" if self.mode == "index" else self.mode

    def validate_for(self, spec: ExtractorSpec) -> None:
        if spec.is_vector and self.mode != "fixed_vector":
            raise ConfigError(f"{spec.extractor_id}: vector extractors only pair with fixed_vector")
        if spec.is_sequence and self.mode == "fixed_vector":
            raise ConfigError(f"{spec.extractor_id}: sequence extractors cannot emit fixed_vector")
        if self.mode == "index" and not 0 <= self.index < spec.num_layers:
            raise ConfigError(f"{spec.extractor_id}: layer {self.index} outside [0, {spec.num_layers})")

    def select(self, all_layers: np.ndarray) -> np.ndarray:
        """Slice a (num_layers, L, h) stack down to this spec's payload."""
        if self.mode == "all_layers":
            return all_layers
        if self.mode == "last_hidden":
            return all_layers[-1]
        if self.mode == "index":
            return all_layers[self.index]
        raise ConfigError("fixed_vector payloads are not layer stacks")


@dataclass(frozen=True)
class FeatureRecord:
    sample_id: str
    extractor_id: str
    layer: LayerSpec
    payload: np.ndarray
    cache_key: str = ""

    @property
    def L(self) -> int:
        if self.payload.ndim == 1:
            return 0
        return self.payload.shape[-2]

    @property
    def dtype(self) -> str:
        return str(self.payload.dtype)

    def validate(self, spec: ExtractorSpec) -> None:
        expected_ndim = {"all_layers": 3, "last_hidden": 2, "index": 2, "fixed_vector": 1}[self.layer.mode]
        p = self.payload
        if p.ndim != expected_ndim or p.shape[-1] != spec.hidden_dim:
            raise ConfigError(f"{self.sample_id}: payload shape {p.shape} does not match {self.layer} "
                              f"with h={spec.hidden_dim}")
        if self.layer.mode == "all_layers" and p.shape[0] != spec.num_layers:
            raise ConfigError(f"{self.sample_id}: expected {spec.num_layers} layers, got {p.shape[0]}")
        if p.ndim >= 2 and p.shape[-2] < 1:
            raise ConfigError(f"{self.sample_id}: empty sequence")
        check_finite(p, f"{spec.extractor_id}/{self.sample_id}")


def check_finite(payload: np.ndarray, where: str) -> None:
    bad = ~np.isfinite(payload)
    if bad.any():
        idx = np.argwhere(bad)[:3].tolist()
        raise NonFiniteFeatures(f"{where}: {int(bad.sum())} non-finite values, first at {idx}")


def hash_checkpoint(path) -> str:
    """sha256 over the bytes of a checkpoint file or every file under a directory."""
    path = Path(path)
    h = hashlib.sha256()
    files = [path] if path.is_file() else sorted(p for p in path.rglob("*") if p.is_file())
    for f in files:
        h.update(str(f.relative_to(path.parent if path.is_file() else path)).encode())
        with open(f, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
    return h.hexdigest()[:16]


def spec_version(spec_fields: Mapping) -> str:
    return digest(spec_fields)
