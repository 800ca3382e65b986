"""Sample manifests, split policies and count verification."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..errors import AlreadyAssigned, ManifestError, UncoveredGroup
from ..tasks import TaskSpec

SPLITS = ("train", "validation", "test")
UNASSIGNED = "unassigned"
ALL_SPLITS = SPLITS + (UNASSIGNED,)
POLICY_KINDS = ("official", "random_ratio", "group_assignment", "group_random")
MANIFEST_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Sample:
    sample_id: str
    audio_ref: str
    duration_s: float
    sample_rate_hz: int = 16000
    labels: Mapping[str, object] = field(default_factory=dict)
    split: str = UNASSIGNED
    group_keys: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.duration_s > 0 and math.isfinite(self.duration_s)):
            raise ManifestError(f"{self.sample_id}: duration_s must be > 0, got {self.duration_s}")
        if self.split not in ALL_SPLITS:
            raise ManifestError(f"{self.sample_id}: unknown split {self.split!r}")

    def with_split(self, split: str) -> "Sample":
        return dataclasses.replace(self, split=split)

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "audio_ref": self.audio_ref,
            "sample_rate_hz": self.sample_rate_hz,
            "duration_s": self.duration_s,
            "labels": dict(self.labels),
            "split": self.split,
            "group_keys": dict(self.group_keys),
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "Sample":
        return cls(
            sample_id=rec["sample_id"],
            audio_ref=rec["audio_ref"],
            duration_s=float(rec["duration_s"]),
            sample_rate_hz=int(rec.get("sample_rate_hz", 16000)),
            labels=dict(rec.get("labels") or {}),
            split=rec.get("split", UNASSIGNED),
            group_keys={k: str(v) for k, v in (rec.get("group_keys") or {}).items()},
        )


@dataclass(frozen=True)
class SplitPolicy:
    policy_id: str
    kind: str
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ManifestError(f"unknown split policy kind {self.kind!r}")
        if self.kind in ("random_ratio", "group_random") and "seed" not in self.params:
            raise ManifestError(f"policy {self.policy_id}: random policies need an explicit seed")
        if self.kind in ("group_assignment", "group_random") and "group_key" not in self.params:
            raise ManifestError(f"policy {self.policy_id}: group policies need a group_key")

    def to_dict(self) -> dict:
        return {"policy_id": self.policy_id, "kind": self.kind, "params": _jsonable(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitPolicy":
        return cls(d["policy_id"], d["kind"], dict(d.get("params") or {}))

    @classmethod
    def official(cls, **params) -> "SplitPolicy":
        return cls("official", "official", params)

    @classmethod
    def random(cls, train_fraction: float, seed: int, **params) -> "SplitPolicy":
        return cls(f"random_{train_fraction:g}", "random_ratio",
                   {"train_fraction": train_fraction, "seed": seed, **params})

    @classmethod
    def by_group(cls, group_key: str, assignment: Mapping[str, str], **params) -> "SplitPolicy":
        return cls(f"group_{group_key}", "group_assignment",
                   {"group_key": group_key, "assignment": dict(assignment), **params})


@dataclass(frozen=True)
class ExcludedEntry:
    sample_id: str
    audio_ref: str
    reason: str


@dataclass(frozen=True)
class Manifest:
    dataset_id: str
    samples: tuple[Sample, ...]
    policy: SplitPolicy | None = None
    excluded: tuple[ExcludedEntry, ...] = ()
    label_overrides: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        samples = tuple(sorted(self.samples, key=lambda s: s.sample_id))
        ids = [s.sample_id for s in samples]
        if len(set(ids)) != len(ids):
            dup = [k for k, v in Counter(ids).items() if v > 1][:5]
            raise ManifestError(f"{self.dataset_id}: duplicate sample ids {dup}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def counts(self) -> dict[str, int]:
        c = Counter(s.split for s in self.samples)
        return {k: c.get(k, 0) for k in ALL_SPLITS}

    def split_counts(self) -> tuple[int, int, int]:
        c = self.counts
        return tuple(c[s] for s in SPLITS)

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]

    def replace(self, **changes) -> "Manifest":
        return dataclasses.replace(self, **changes)

    def task_samples(self, task: TaskSpec, split: str | None = None) -> list[Sample]:
        """Samples carrying a usable label for ``task`` (excluded raw labels skipped)."""
        space = self.task_label_space(task)
        out = []
        for s in self.samples:
            if split is not None and s.split != split:
                continue
            if task.task_id not in s.labels or s.labels[task.task_id] is None:
                continue
            if space is not None and space.is_excluded(s.labels[task.task_id]):
                continue
            out.append(s)
        return out

    def task_counts(self, task: TaskSpec) -> tuple[int, int, int]:
        c = Counter(s.split for s in self.task_samples(task))
        return tuple(c.get(k, 0) for k in SPLITS)

    def task_label_space(self, task: TaskSpec):
        if not task.is_classification:
            return None
        override = self.label_overrides.get(task.task_id)
        if override is not None:
            return task.raw_label_space().restrict(override)
        if task.prefilter_classes:
            return task.raw_label_space()
        return task.label_space

    def header(self) -> dict:
        seed = None
        if self.policy is not None:
            seed = self.policy.params.get("seed")
        return {
            "record": "header",
            "format_version": MANIFEST_FORMAT_VERSION,
            "dataset_id": self.dataset_id,
            "policy": self.policy.to_dict() if self.policy else None,
            "seed": seed,
            "counts": self.counts,
            "excluded": [dataclasses.asdict(e) for e in self.excluded],
            "label_overrides": {k: list(v) for k, v in sorted(self.label_overrides.items())},
            "notes": list(self.notes),
        }

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(s.to_record(), sort_keys=True) for s in self.samples]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        from ..utils import atomic_write_text
        atomic_write_text(path, self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Manifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ManifestError("empty manifest file")
        header = json.loads(lines[0])
        if header.get("record") != "header":
            raise ManifestError("manifest must start with a header record")
        if header.get("format_version") != MANIFEST_FORMAT_VERSION:
            raise ManifestError(f"unsupported manifest format {header.get('format_version')}")
        samples = tuple(Sample.from_record(json.loads(ln)) for ln in lines[1:])
        policy = SplitPolicy.from_dict(header["policy"]) if header.get("policy") else None
        m = cls(
            dataset_id=header["dataset_id"],
            samples=samples,
            policy=policy,
            excluded=tuple(ExcludedEntry(**e) for e in header.get("excluded") or ()),
            label_overrides={k: tuple(v) for k, v in (header.get("label_overrides") or {}).items()},
            notes=tuple(header.get("notes") or ()),
        )
        if m.counts != header.get("counts"):
            raise ManifestError(f"header counts {header.get('counts')} disagree with samples {m.counts}")
        return m

    @classmethod
    def load(cls, path) -> "Manifest":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def _jsonable(obj):
    return json.loads(json.dumps(obj, sort_keys=True, default=str))


def stable_unit_hash(sample_id: str, seed) -> float:
    """Map (sample_id, seed) to [0, 1) independent of process, platform and order."""
    digest = hashlib.sha256(f"{seed}\x1f{sample_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64


def split_random(manifest: Manifest, train_fraction: float, seed, test_split: str = "test") -> Manifest:
    """Assign the ``train_fraction`` of samples with the smallest hash to train, the rest to test.

    Ranking by a per-sample hash keeps the assignment a pure function of
    (sample_id, seed) while hitting the requested proportion to within one
    sample.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ManifestError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if any(s.split != UNASSIGNED for s in manifest.samples):
        raise AlreadyAssigned(f"{manifest.dataset_id}: manifest already has split assignments")
    n = len(manifest.samples)
    n_train = int(math.floor(n * train_fraction + 1e-9))
    ranked = sorted(manifest.samples, key=lambda s: (stable_unit_hash(s.sample_id, seed), s.sample_id))
    train_ids = {s.sample_id for s in ranked[:n_train]}
    samples = tuple(s.with_split("train" if s.sample_id in train_ids else test_split)
                    for s in manifest.samples)
    policy = manifest.policy or SplitPolicy.random(train_fraction, seed)
    return manifest.replace(samples=samples, policy=policy)


def split_by_group(manifest: Manifest, group_key: str, assignment: Mapping[str, str],
                   default: str | None = None) -> Manifest:
    missing_key = [s.sample_id for s in manifest.samples if group_key not in s.group_keys]
    if missing_key:
        raise UncoveredGroup(f"{len(missing_key)} samples lack group key {group_key!r}, e.g. {missing_key[:3]}")
    assignment = {str(k): v for k, v in assignment.items()}
    for split in assignment.values():
        if split not in ALL_SPLITS:
            raise ManifestError(f"group assignment to unknown split {split!r}")
    observed = {s.group_keys[group_key] for s in manifest.samples}
    uncovered = sorted(observed - set(assignment))
    if uncovered and default is None:
        raise UncoveredGroup(f"group values not covered by the assignment: {uncovered}")
    samples = tuple(s.with_split(assignment.get(s.group_keys[group_key], default))
                    for s in manifest.samples)
    return manifest.replace(samples=samples)


def filter_min_class_count(manifest: Manifest, task: TaskSpec, min_n: int) -> Manifest:
    """Drop samples of classes with fewer than ``min_n`` samples; shrink the task's label space."""
    if not task.is_classification:
        raise ManifestError(f"{task.task_id}: min-count filtering needs a classification task")
    if min_n <= 0:
        return manifest
    space = manifest.task_label_space(task)
    counts = Counter()
    for s in manifest.samples:
        raw = s.labels.get(task.task_id)
        if raw is None or space.is_excluded(raw):
            continue
        counts[space.lookup(raw)] += 1
    keep = [c for c in space.classes if counts.get(c, 0) >= min_n]
    keep_set = set(keep)
    samples = []
    for s in manifest.samples:
        raw = s.labels.get(task.task_id)
        if raw is not None and not space.is_excluded(raw) and space.lookup(raw) not in keep_set:
            continue
        samples.append(s)
    before = {k for k in SPLITS if manifest.counts[k] > 0}
    after = Counter(s.split for s in samples)
    emptied = [k for k in before if after.get(k, 0) == 0]
    if emptied:
        raise ManifestError(f"{task.task_id}: filtering at min_n={min_n} empties splits {emptied}")
    overrides = dict(manifest.label_overrides)
    overrides[task.task_id] = tuple(keep)
    dropped = sorted(set(space.classes) - keep_set)
    note = f"{task.task_id}: removed classes with fewer than {min_n} samples: {dropped}"
    return manifest.replace(samples=tuple(samples), label_overrides=overrides,
                            notes=manifest.notes + (note,))


@dataclass
class VerificationReport:
    dataset_id: str
    task_id: str | None
    expected: tuple[int, int, int]
    observed: tuple[int, int, int]
    notes: list[str] = field(default_factory=list)
    excluded: int = 0

    @property
    def deltas(self) -> dict[str, int]:
        return {k: o - e for k, o, e in zip(SPLITS, self.observed, self.expected)}

    @property
    def passed(self) -> bool:
        return all(v == 0 for v in self.deltas.values())

    def render(self) -> str:
        def fmt(n):
            return f"{n:,}" if n else "-"
        scope = f"{self.dataset_id}" + (f" [{self.task_id}]" if self.task_id else "")
        lines = [f"{scope}: train {fmt(self.observed[0])} / validation {fmt(self.observed[1])} "
                 f"/ test {fmt(self.observed[2])}"]
        lines.append(f"  expected {fmt(self.expected[0])} / {fmt(self.expected[1])} / {fmt(self.expected[2])}"
                     f"  deltas {self.deltas}  -> {'PASS' if self.passed else 'FAIL'}")
        if self.excluded:
            lines.append(f"  {self.excluded} unreadable entries excluded (listed in manifest header)")
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


def verify_manifest(manifest: Manifest, expected_counts: Iterable[int],
                    task: TaskSpec | None = None, notes: Iterable[str] = ()) -> VerificationReport:
    expected = tuple(int(x) for x in expected_counts)
    if len(expected) != 3:
        raise ManifestError("expected_counts must be (train, validation, test)")
    observed = manifest.task_counts(task) if task is not None else manifest.split_counts()
    report = VerificationReport(manifest.dataset_id, task.task_id if task else None,
                                expected, observed, list(manifest.notes) + list(notes),
                                len(manifest.excluded))
    if observed[0] == 0 or observed[2] == 0:
        report.notes.append("train or test split is empty")
    return report
