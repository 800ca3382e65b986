"""Built-in encoder catalog plus user extractor files."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import yaml

from ..errors import ConfigError, UnknownExtractor
from ..tasks import _package_data
from .spec import ExtractorSpec


class ExtractorCatalog:
    def __init__(self):
        self._specs: dict[str, ExtractorSpec] = {}

    def add(self, spec: ExtractorSpec, replace: bool = False) -> None:
        if spec.extractor_id in self._specs and not replace:
            raise ConfigError(f"extractor {spec.extractor_id!r} already defined")
        self._specs[spec.extractor_id] = spec

    def get(self, extractor_id: str) -> ExtractorSpec:
        try:
            return self._specs[extractor_id]
        except KeyError:
            raise UnknownExtractor(f"unknown extractor {extractor_id!r}") from None

    def __contains__(self, extractor_id) -> bool:
        return extractor_id in self._specs

    def __iter__(self):
        return iter(self._specs.values())

    def __len__(self) -> int:
        return len(self._specs)

    def ids(self) -> list[str]:
        return list(self._specs)

    def load_document(self, doc, replace: bool = False) -> None:
        if int(doc.get("version", 0)) != 1:
            raise ConfigError(f"unsupported extractor catalog version {doc.get('version')!r}")
        for rec in doc.get("extractors") or ():
            self.add(ExtractorSpec.from_dict(rec), replace=replace)

    def load_file(self, path, replace: bool = False) -> None:
        with open(path, encoding="utf-8") as fh:
            self.load_document(yaml.safe_load(fh), replace=replace)


def load_extractor_catalog(extra_paths: Iterable = ()) -> ExtractorCatalog:
    cat = ExtractorCatalog()
    cat.load_file(_package_data("extractors.yaml"))
    for path in extra_paths:
        cat.load_file(Path(path), replace=True)
    return cat
