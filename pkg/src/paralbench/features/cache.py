"""On-disk feature cache.

Layout::

    root/<extractor_id>/<version_hash>/<key>.bin    raw float32 payload
    root/<extractor_id>/<version_hash>/<key>.meta   JSON: shape, dtype, layer, preproc, sha256
    root/<extractor_id>/index.jsonl                 one line per written entry

Payload and sidecar are each written to a temp file and renamed into place,
so readers only ever see complete files. An entry whose sidecar or payload
fails validation is treated as a miss, re-extracted and counted.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from filelock import FileLock

from ..corpus.manifest import Sample
from ..utils import atomic_write_bytes, atomic_write_text, canonical_json
from .extractors import Extractor, extract
from .spec import ExtractorSpec, FeatureRecord, LayerSpec

log = logging.getLogger(__name__)

CACHE_DTYPE = np.dtype("<f4")


def cache_key(spec: ExtractorSpec, sample_id: str, layer: LayerSpec, preproc_params=None) -> str:
    blob = canonical_json({
        "extractor_id": spec.extractor_id,
        "version_hash": spec.version_hash,
        "layer": str(layer),
        "sample_id": sample_id,
        "preproc": preproc_params or {},
    })
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    reextracted: int = 0
    sliced: int = 0

    @property
    def requests(self) -> int:
        return self.hits + self.misses + self.sliced

    def hit_rate(self) -> float:
        return (self.hits + self.sliced) / self.requests if self.requests else 0.0


class CorruptEntry(Exception):
    pass


class FeatureCache:
    def __init__(self, root):
        self.root = Path(root)
        self.stats = CacheStats()

    def entry_dir(self, spec: ExtractorSpec) -> Path:
        return self.root / spec.extractor_id / (spec.version_hash or "unpinned")

    def paths(self, spec: ExtractorSpec, key: str) -> tuple[Path, Path]:
        d = self.entry_dir(spec)
        return d / f"{key}.bin", d / f"{key}.meta"

    def index_path(self, spec: ExtractorSpec) -> Path:
        return self.root / spec.extractor_id / "index.jsonl"

    def read(self, spec: ExtractorSpec, key: str) -> np.ndarray | None:
        """Payload for ``key``; None on a clean miss, CorruptEntry on a damaged entry."""
        bin_path, meta_path = self.paths(spec, key)
        if not meta_path.exists() and not bin_path.exists():
            return None
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            data = bin_path.read_bytes()
        except (OSError, ValueError) as exc:
            raise CorruptEntry(f"{key}: unreadable entry ({exc})") from None
        shape = tuple(int(x) for x in meta.get("shape", ()))
        expected = int(np.prod(shape, dtype=np.int64)) * CACHE_DTYPE.itemsize
        if len(data) != expected:
            raise CorruptEntry(f"{key}: payload has {len(data)} bytes, expected {expected}")
        if hashlib.sha256(data).hexdigest() != meta.get("sha256"):
            raise CorruptEntry(f"{key}: checksum mismatch")
        return np.frombuffer(data, dtype=CACHE_DTYPE).reshape(shape).copy()

    def write(self, spec: ExtractorSpec, key: str, record: FeatureRecord, preproc) -> None:
        payload = np.ascontiguousarray(record.payload, dtype=CACHE_DTYPE)
        data = payload.tobytes()
        meta = {
            "key": key,
            "sample_id": record.sample_id,
            "extractor_id": spec.extractor_id,
            "version_hash": spec.version_hash,
            "layer": str(record.layer),
            "shape": list(payload.shape),
            "dtype": "float32",
            "preproc": preproc or {},
            "sha256": hashlib.sha256(data).hexdigest(),
        }
        bin_path, meta_path = self.paths(spec, key)
        atomic_write_bytes(bin_path, data)
        atomic_write_text(meta_path, json.dumps(meta, sort_keys=True))
        line = json.dumps({k: meta[k] for k in ("key", "sample_id", "layer", "shape", "version_hash")},
                          sort_keys=True)
        index = self.index_path(spec)
        with FileLock(str(index) + ".lock"):
            with open(index, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def index_entries(self, spec: ExtractorSpec) -> dict[str, dict]:
        index = self.index_path(spec)
        if not index.exists():
            return {}
        out = {}
        for line in index.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                if rec.get("version_hash") == spec.version_hash:
                    out[rec["key"]] = rec
        return out

    def invalidate(self, spec: ExtractorSpec, key: str) -> None:
        for p in self.paths(spec, key):
            p.unlink(missing_ok=True)

    def _load(self, spec, key):
        try:
            return self.read(spec, key)
        except CorruptEntry as exc:
            log.warning("feature cache: %s; invalidating and re-extracting", exc)
            self.invalidate(spec, key)
            self.stats.reextracted += 1
            return None

    def get_or_extract(self, extractor: Extractor, sample: Sample, layer: LayerSpec) -> FeatureRecord:
        spec = extractor.spec
        layer.validate_for(spec)
        preproc = extractor.preproc_params()
        key = cache_key(spec, sample.sample_id, layer, preproc)
        payload = self._load(spec, key)
        if payload is not None:
            self.stats.hits += 1
            return FeatureRecord(sample.sample_id, spec.extractor_id, layer, payload, key)
        if spec.is_sequence and layer.mode != "all_layers":
            # a stored layer stack answers single-layer requests without the encoder
            full_key = cache_key(spec, sample.sample_id, LayerSpec.all(), preproc)
            full = self._load(spec, full_key)
            if full is not None:
                self.stats.sliced += 1
                return FeatureRecord(sample.sample_id, spec.extractor_id, layer,
                                     np.ascontiguousarray(layer.select(full)), key)
        self.stats.misses += 1
        record = extract(extractor, sample, layer)
        record = FeatureRecord(record.sample_id, record.extractor_id, layer, record.payload, key)
        self.write(spec, key, record, preproc)
        return record

    def prefetch(self, extractor: Extractor, samples: Iterable[Sample], layer: LayerSpec) -> list[FeatureRecord]:
        return [self.get_or_extract(extractor, s, layer) for s in samples]


def get_or_extract(cache: FeatureCache | None, extractor: Extractor, sample: Sample, layer: LayerSpec) -> FeatureRecord:
    if cache is None:
        return extract(extractor, sample, layer)
    return cache.get_or_extract(extractor, sample, layer)
