"""Harness configuration: a versioned YAML file plus command-line overrides.

Lookup order for the file: explicit ``--config`` path, then the
``PARALBENCH_CONFIG`` environment variable, then built-in defaults.
"""

from __future__ import annotations

import dataclasses
import importlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from .errors import ConfigError
from .utils import digest

CONFIG_ENV = "PARALBENCH_CONFIG"
CONFIG_VERSION = 1
_PATH_FIELDS = ("cache_root", "results_root", "manifest_dir", "checkpoint_dir")


@dataclass
class HarnessConfig:
    cache_root: str = ".paralbench/cache"
    results_root: str = ".paralbench/results"
    manifest_dir: str = ".paralbench/manifests"
    checkpoint_dir: str | None = ".paralbench/checkpoints"
    registry_paths: list[str] = field(default_factory=list)
    extractor_paths: list[str] = field(default_factory=list)
    seeds: list[int] = field(default_factory=lambda: [0])
    adapters: dict[str, str] = field(default_factory=dict)    # name -> "module:factory"
    raw_roots: dict[str, str] = field(default_factory=dict)
    source: str | None = None

    @property
    def seed(self) -> int:
        return int(self.seeds[0])

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("source")
        return {"version": CONFIG_VERSION, **d}

    def hash(self) -> str:
        return digest(self.to_dict())

    def with_overrides(self, **changes) -> "HarnessConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        if "seed" in changes:
            changes["seeds"] = [int(changes.pop("seed"))]
        return dataclasses.replace(self, **changes)

    def register_adapters(self) -> None:
        from .features.adapters import register_adapter
        for name, target in self.adapters.items():
            module, _, attr = target.partition(":")
            if not attr:
                raise ConfigError(f"adapter {name!r}: expected 'module:factory', got {target!r}")
            try:
                factory = getattr(importlib.import_module(module), attr)
            except (ImportError, AttributeError) as exc:
                raise ConfigError(f"adapter {name!r}: cannot import {target!r}: {exc}") from exc
            register_adapter(name, factory, replace=True)


def _resolve(path: str | None, base: Path) -> str | None:
    if path is None:
        return None
    p = Path(os.path.expanduser(str(path)))
    return str(p if p.is_absolute() else (base / p))


def config_from_mapping(doc: Mapping, base_dir=None, source: str | None = None) -> HarnessConfig:
    if not isinstance(doc, Mapping):
        raise ConfigError("config must be a mapping")
    version = doc.get("version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {CONFIG_VERSION})")
    known = {f.name for f in dataclasses.fields(HarnessConfig)} - {"source"}
    unknown = set(doc) - known - {"version"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = Path(base_dir) if base_dir else Path.cwd()
    values = {k: doc[k] for k in known if k in doc}
    for k in _PATH_FIELDS:
        if k in values:
            values[k] = _resolve(values[k], base)
    for k in ("registry_paths", "extractor_paths"):
        if k in values:
            values[k] = [_resolve(p, base) for p in values[k] or []]
    if "raw_roots" in values:
        values["raw_roots"] = {str(k): _resolve(v, base) for k, v in (values["raw_roots"] or {}).items()}
    if "seeds" in values:
        seeds = values["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
    if "adapters" in values:
        values["adapters"] = {str(k): str(v) for k, v in (values["adapters"] or {}).items()}
    return HarnessConfig(**values, source=source)


def load_config(path=None, environ: Mapping[str, str] | None = None) -> HarnessConfig:
    environ = os.environ if environ is None else environ
    path = path or environ.get(CONFIG_ENV) or None
    if path is None:
        return HarnessConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from exc
    return config_from_mapping(doc or {}, base_dir=p.parent, source=str(p))


def dump_config(cfg: HarnessConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
