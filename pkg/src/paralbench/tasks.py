"""Task registry: label spaces, regression targets and cross-corpus mappings."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import yaml

from .errors import (
    DuplicateTask,
    EmptyMapping,
    InvalidTaskSpec,
    UnknownLabel,
    UnknownTask,
)

TAXONOMIES = ("short", "medium", "long")
KINDS = ("classification", "regression")
NORMALIZATIONS = ("none", "min_max_to_unit")
CLASSIFICATION_METRICS = ("WA", "UA", "WF1")

EMOTION_VOCABULARY = (
    "anger", "happiness", "sadness", "neutral", "disgust",
    "surprise", "fear", "contempt", "other",
)


def canonicalize(raw) -> str:
    return str(raw).strip().lower()


@dataclass(frozen=True)
class LabelSpace:
    classes: tuple[str, ...]
    aliases: Mapping[str, str] = field(default_factory=dict)
    exclude: frozenset[str] = frozenset()
    name: str = ""
    inferred: str = ""

    def __post_init__(self):
        classes = tuple(canonicalize(c) for c in self.classes)
        if len(set(classes)) != len(classes):
            raise InvalidTaskSpec(f"duplicate class names in {self.name or classes}")
        object.__setattr__(self, "classes", classes)
        aliases = {canonicalize(k): canonicalize(v) for k, v in dict(self.aliases).items()}
        for alias, target in aliases.items():
            if target not in classes:
                raise InvalidTaskSpec(f"alias {alias!r} -> {target!r} points outside {classes}")
        object.__setattr__(self, "aliases", aliases)
        object.__setattr__(self, "exclude", frozenset(canonicalize(x) for x in self.exclude))

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def index_of(self, name: str) -> int:
        return self.classes.index(canonicalize(name))

    def lookup(self, raw) -> str | None:
        """Canonical class name for ``raw``, or None when it is not in the space."""
        key = canonicalize(raw)
        if key in self.classes:
            return key
        return self.aliases.get(key)

    def is_excluded(self, raw) -> bool:
        key = canonicalize(raw)
        return key in self.exclude and self.lookup(key) is None

    def restrict(self, keep: Iterable[str]) -> "LabelSpace":
        keep = {canonicalize(k) for k in keep}
        classes = tuple(c for c in self.classes if c in keep)
        aliases = {a: t for a, t in self.aliases.items() if t in keep}
        dropped = set(self.classes) - keep
        return LabelSpace(classes, aliases, self.exclude | dropped, self.name, self.inferred)

    def to_dict(self) -> dict:
        out = {"classes": list(self.classes)}
        if self.aliases:
            out["aliases"] = dict(sorted(self.aliases.items()))
        if self.exclude:
            out["exclude"] = sorted(self.exclude)
        return out


def resolve_label(space: LabelSpace, raw) -> int:
    name = space.lookup(raw)
    if name is None:
        raise UnknownLabel(raw, space.name)
    return space.classes.index(name)


@dataclass(frozen=True)
class RegressionTarget:
    name: str
    raw_range: tuple[float, float]
    normalization: str = "none"

    def __post_init__(self):
        lo, hi = (float(v) for v in self.raw_range)
        if not lo < hi:
            raise InvalidTaskSpec(f"target {self.name}: raw_range lo must be < hi, got {self.raw_range}")
        if self.normalization not in NORMALIZATIONS:
            raise InvalidTaskSpec(f"target {self.name}: unknown normalization {self.normalization!r}")
        object.__setattr__(self, "raw_range", (lo, hi))

    def normalize(self, value) -> float:
        value = float(value)
        if self.normalization == "min_max_to_unit":
            lo, hi = self.raw_range
            return min(1.0, max(0.0, (value - lo) / (hi - lo)))
        return value


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    dataset_id: str
    taxonomy: str
    kind: str
    label_space: LabelSpace | None = None
    target: RegressionTarget | None = None
    metrics: tuple[str, ...] = ()
    prefilter_classes: tuple[str, ...] = ()
    min_class_count: int = 0
    inferred: str = ""

    @property
    def is_classification(self) -> bool:
        return self.kind == "classification"

    @property
    def num_outputs(self) -> int:
        return self.label_space.num_classes if self.is_classification else 1

    def validate(self) -> None:
        if self.taxonomy not in TAXONOMIES:
            raise InvalidTaskSpec(f"{self.task_id}: taxonomy must be one of {TAXONOMIES}")
        if self.kind not in KINDS:
            raise InvalidTaskSpec(f"{self.task_id}: kind must be one of {KINDS}")
        if self.is_classification:
            if self.label_space is None or self.label_space.num_classes < 2:
                raise InvalidTaskSpec(f"{self.task_id}: classification needs at least 2 classes")
            if self.target is not None:
                raise InvalidTaskSpec(f"{self.task_id}: classification task cannot carry a regression target")
        else:
            if self.target is None:
                raise InvalidTaskSpec(f"{self.task_id}: regression needs exactly one scalar target")
            if self.label_space is not None:
                raise InvalidTaskSpec(f"{self.task_id}: regression task cannot carry a label space")
        if not self.task_id or not self.dataset_id:
            raise InvalidTaskSpec("task_id and dataset_id are required")

    def raw_label_space(self) -> LabelSpace:
        """Label space before min-count filtering (adds the known pre-filter classes)."""
        if not self.prefilter_classes:
            return self.label_space
        space = self.label_space
        return LabelSpace(space.classes + tuple(self.prefilter_classes), space.aliases,
                          space.exclude, space.name, space.inferred)

    def to_record(self) -> dict:
        rec = {"id": self.task_id, "dataset": self.dataset_id, "taxonomy": self.taxonomy,
               "kind": self.kind, "metrics": list(self.metrics)}
        if self.label_space is not None:
            rec.update(self.label_space.to_dict())
        if self.target is not None:
            rec["target"] = {"name": self.target.name, "raw_range": list(self.target.raw_range),
                             "normalization": self.target.normalization}
        if self.prefilter_classes:
            rec["prefilter_classes"] = list(self.prefilter_classes)
        if self.min_class_count:
            rec["min_class_count"] = self.min_class_count
        if self.inferred:
            rec["inferred"] = self.inferred
        return rec


def task_from_record(rec: Mapping) -> TaskSpec:
    kind = rec.get("kind")
    space = target = None
    if kind == "classification":
        space = LabelSpace(
            classes=tuple(rec.get("classes", ())),
            aliases=rec.get("aliases") or {},
            exclude=frozenset(rec.get("exclude") or ()),
            name=rec["id"],
            inferred=rec.get("inferred", ""),
        )
    elif kind == "regression":
        t = rec.get("target")
        if t is None:
            raise InvalidTaskSpec(f"{rec.get('id')}: regression record without target")
        target = RegressionTarget(t["name"], tuple(t["raw_range"]), t.get("normalization", "none"))
    metrics = tuple(rec.get("metrics") or (CLASSIFICATION_METRICS if kind == "classification" else ("MAE",)))
    return TaskSpec(
        task_id=rec["id"],
        dataset_id=rec["dataset"],
        taxonomy=rec["taxonomy"],
        kind=kind,
        label_space=space,
        target=target,
        metrics=metrics,
        prefilter_classes=tuple(canonicalize(c) for c in rec.get("prefilter_classes") or ()),
        min_class_count=int(rec.get("min_class_count") or 0),
        inferred=rec.get("inferred", ""),
    )


@dataclass(frozen=True)
class LabelMapping:
    source_space: LabelSpace
    target_space: LabelSpace
    pairs: tuple[tuple[str, str], ...]
    dropped_target_classes: tuple[str, ...]

    def source_index(self, target_raw) -> int | None:
        """Train-space index for a raw test label; None when its class is dropped."""
        name = self.target_space.lookup(target_raw)
        if name is None:
            raise UnknownLabel(target_raw, self.target_space.name)
        for tgt, src in self.pairs:
            if tgt == name:
                return self.source_space.index_of(src)
        return None

    @property
    def is_identity(self) -> bool:
        return not self.dropped_target_classes and all(t == s for t, s in self.pairs) \
            and len(self.pairs) == len(self.source_space)


def build_label_mapping(train_space: LabelSpace, test_space: LabelSpace) -> LabelMapping:
    pairs, dropped = [], []
    for name in test_space.classes:
        src = train_space.lookup(name)
        if src is None:
            dropped.append(name)
        else:
            pairs.append((name, src))
    if not pairs:
        raise EmptyMapping(
            f"no class of {test_space.name or test_space.classes} maps into "
            f"{train_space.name or train_space.classes}")
    pairs.sort()
    return LabelMapping(train_space, test_space, tuple(pairs), tuple(sorted(dropped)))


class TaskRegistry:
    """Immutable-after-setup catalog of tasks plus recorded split counts."""

    def __init__(self):
        self._tasks: dict[str, TaskSpec] = {}
        self.expected_counts: dict[tuple[str, str | None], tuple[int, int, int]] = {}
        self.notes: dict[str, str] = {}
        self.synthetic_corpora: dict[str, dict] = {}

    def register_task(self, spec: TaskSpec) -> str:
        spec.validate()
        if spec.task_id in self._tasks:
            raise DuplicateTask(spec.task_id)
        self._tasks[spec.task_id] = spec
        return spec.task_id

    def get(self, task_id: str) -> TaskSpec:
        try:
            return self._tasks[task_id]
        except KeyError:
            raise UnknownTask(task_id) from None

    def __contains__(self, task_id) -> bool:
        return task_id in self._tasks

    def __iter__(self):
        return iter(self._tasks.values())

    def tasks_for_dataset(self, dataset_id: str) -> list[TaskSpec]:
        return [t for t in self._tasks.values() if t.dataset_id == dataset_id]

    def datasets(self) -> list[str]:
        return sorted({t.dataset_id for t in self._tasks.values()})

    def expected(self, dataset_id: str, task_id: str | None = None):
        return self.expected_counts.get((dataset_id, task_id))

    def load_file(self, path) -> None:
        with open(path, encoding="utf-8") as fh:
            self.load_document(yaml.safe_load(fh))

    def load_document(self, doc: Mapping) -> None:
        if int(doc.get("version", 0)) != 1:
            raise InvalidTaskSpec(f"unsupported catalog version {doc.get('version')!r}")
        for rec in doc.get("tasks") or ():
            self.register_task(task_from_record(rec))
        for row in doc.get("expected_counts") or ():
            self.expected_counts[(row["dataset"], row.get("task"))] = tuple(int(c) for c in row["counts"])
        self.notes.update(doc.get("notes") or {})
        for corpus in doc.get("corpora") or ():
            self.synthetic_corpora[corpus["id"]] = dict(corpus)

    def dump(self) -> str:
        doc = {"format": "paralbench-task-catalog", "version": 1,
               "tasks": [t.to_record() for t in self._tasks.values()]}
        return yaml.safe_dump(doc, sort_keys=False)


def _package_data(name: str) -> Path:
    return Path(str(resources.files("paralbench") / "data" / name))


def load_builtin_catalog(include_synthetic: bool = True, extra_paths: Iterable = ()) -> TaskRegistry:
    reg = TaskRegistry()
    reg.load_file(_package_data("catalog.yaml"))
    if include_synthetic:
        reg.load_file(_package_data("synthetic.yaml"))
    for path in extra_paths:
        reg.load_file(path)
    return reg


def replace_label_space(task: TaskSpec, space: LabelSpace) -> TaskSpec:
    return dataclasses.replace(task, label_space=space, prefilter_classes=())
