"""Run specifications, result records and the append-only results store."""

from __future__ import annotations

import dataclasses
import json
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .errors import ConfigError
from .utils import canonical_json, digest

PROTOCOLS = ("within", "cross_corpus", "layer_sweep", "fusion_compare", "lora_compare")
VARIANTS = ("", "frozen_backbone", "lora")
STATUSES = ("ok", "failed", "skipped")


@dataclass(frozen=True)
class RunSpec:
    protocol: str
    task_id: str
    extractor_id: str
    layer: str = "last_hidden"
    test_task_id: str | None = None
    stride: int | None = None
    seed: int = 0
    probe: Mapping[str, object] = field(default_factory=dict)
    train: Mapping[str, object] = field(default_factory=dict)
    architecture: str = "probe"
    variant: str = ""
    lora: Mapping[str, object] | None = None
    notes: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.protocol == "cross_corpus" and not self.test_task_id:
            raise ConfigError("cross_corpus runs need a test_task_id")
        if self.protocol == "layer_sweep" and (self.stride is None or int(self.stride) < 1):
            raise ConfigError("layer_sweep runs need a stride >= 1")
        if self.architecture not in ("probe", "mean_baseline"):
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["probe"] = dict(self.probe)
        d["train"] = dict(self.train)
        d["lora"] = dict(self.lora) if self.lora is not None else None
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunSpec":
        known = {k: v for k, v in dict(d).items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def hash(self) -> str:
        """Identity of the computation; free-text notes do not count."""
        d = self.to_dict()
        d.pop("notes")
        return digest(d, length=20)

    def replace(self, **changes) -> "RunSpec":
        return dataclasses.replace(self, **changes)


def environment_fingerprint() -> dict:
    import numpy
    import torch

    from . import __version__
    return {
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "machine": platform.machine(),
        "numpy": numpy.__version__,
        "torch": torch.__version__,
        "paralbench": __version__,
        "torch_threads": torch.get_num_threads(),
    }


@dataclass
class ResultRecord:
    spec_hash: str
    spec: dict
    protocol: str
    task_id: str
    extractor_id: str
    layer: str
    status: str
    metrics: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    error: str | None = None
    seed: int = 0
    config_hash: str = ""
    env: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    timestamp: str = ""
    record_id: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ConfigError(f"unknown record status {self.status!r}")

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def run_spec(self) -> RunSpec:
        return RunSpec.from_dict(self.spec)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ResultRecord":
        return cls(**{k: v for k, v in dict(d).items() if k in cls.__dataclass_fields__})


class ResultsStore:
    """One JSON file per record, ``<spec_hash>__<n>.json``; files are never rewritten."""

    def __init__(self, root):
        self.root = Path(root)

    def append(self, record: ResultRecord) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        n = len(list(self.root.glob(f"{record.spec_hash}__*.json")))
        while True:
            path = self.root / f"{record.spec_hash}__{n:04d}.json"
            record.record_id = path.stem
            payload = json.dumps(record.to_dict(), sort_keys=True, indent=1).encode("utf-8")
            tmp = self.root / f".{path.name}.{os.getpid()}.tmp"
            tmp.write_bytes(payload)
            try:
                # link() fails if another writer took this slot; the record stays unique
                os.link(tmp, path)
                return path
            except FileExistsError:
                n += 1
            finally:
                tmp.unlink(missing_ok=True)

    def records(self, where: Callable[[ResultRecord], bool] | None = None) -> list[ResultRecord]:
        if not self.root.exists():
            return []
        out = []
        for path in sorted(self.root.glob("*__*.json")):
            rec = ResultRecord.from_dict(json.loads(path.read_text(encoding="utf-8")))
            if where is None or where(rec):
                out.append(rec)
        return out

    def for_hash(self, spec_hash: str) -> list[ResultRecord]:
        return [ResultRecord.from_dict(json.loads(p.read_text(encoding="utf-8")))
                for p in sorted(self.root.glob(f"{spec_hash}__*.json"))] if self.root.exists() else []

    def latest_ok(self, spec_hash: str) -> ResultRecord | None:
        ok = [r for r in self.for_hash(spec_hash) if r.ok]
        return ok[-1] if ok else None


def filter_records(records: Iterable[ResultRecord], protocol: str | None = None, task_ids=None,
                   extractor_ids=None, status: str | None = "ok") -> list[ResultRecord]:
    out = []
    for r in records:
        if protocol and r.protocol != protocol:
            continue
        if task_ids and r.task_id not in task_ids:
            continue
        if extractor_ids and r.extractor_id not in extractor_ids:
            continue
        if status and r.status != status:
            continue
        out.append(r)
    return out


def config_digest(config: Mapping) -> str:
    return digest(json.loads(canonical_json(config)))
