"""Manifest construction: native reader or synthetic generator, then a split policy."""

from __future__ import annotations

import logging
import math

from ..errors import ManifestError
from ..tasks import TaskRegistry, load_builtin_catalog
from .manifest import (
    UNASSIGNED,
    Manifest,
    SplitPolicy,
    filter_min_class_count,
    split_by_group,
    split_random,
    stable_unit_hash,
)
from .readers import READERS
from .synthetic import generate_samples

log = logging.getLogger(__name__)

FLUSENSE_SEED = 0
VCTK_SEED = 0

DEFAULT_POLICIES: dict[str, SplitPolicy] = {
    "meld": SplitPolicy.official(),
    "msp_podcast": SplitPolicy.official(),
    "cmu_mosi": SplitPolicy.official(),
    "sep28k": SplitPolicy.official(),
    "daic_woz": SplitPolicy.official(),
    "timit": SplitPolicy.official(),
    "iemocap": SplitPolicy("iemocap_sessions", "group_assignment",
                           {"group_key": "session",
                            "assignment": {"1": "train", "2": "train", "3": "train", "4": "train", "5": "test"}}),
    "mustard": SplitPolicy("mustard_friends_test", "group_assignment",
                           {"group_key": "show", "assignment": {"FRIENDS": "test"}, "default": "train"}),
    "flusense": SplitPolicy("flusense_random_0.8", "random_ratio",
                            {"train_fraction": 0.8, "seed": FLUSENSE_SEED}),
    "vctk": SplitPolicy("vctk_random_0.9", "random_ratio", {"train_fraction": 0.9, "seed": VCTK_SEED}),
}


def default_policy(dataset_id: str, registry: TaskRegistry | None = None) -> SplitPolicy:
    if dataset_id in DEFAULT_POLICIES:
        return DEFAULT_POLICIES[dataset_id]
    registry = registry or load_builtin_catalog()
    if dataset_id in registry.synthetic_corpora:
        return SplitPolicy.official()
    raise ManifestError(f"no default split policy for dataset {dataset_id!r}")


def _reset(manifest: Manifest) -> Manifest:
    return manifest.replace(samples=tuple(s.with_split(UNASSIGNED) for s in manifest.samples))


def apply_policy(manifest: Manifest, policy: SplitPolicy, registry: TaskRegistry) -> Manifest:
    """Assign splits. Per-task minimum class counts are enforced before splitting."""
    if policy.kind != "official":
        manifest = _reset(manifest)
    for task in registry.tasks_for_dataset(manifest.dataset_id):
        if task.min_class_count:
            manifest = filter_min_class_count(manifest, task, task.min_class_count)
    p = policy.params
    if policy.kind == "official":
        pass
    elif policy.kind == "random_ratio":
        manifest = split_random(manifest, float(p["train_fraction"]), p["seed"])
    elif policy.kind == "group_assignment":
        manifest = split_by_group(manifest, p["group_key"], p["assignment"], p.get("default"))
    elif policy.kind == "group_random":
        manifest = _split_group_random(manifest, p["group_key"], float(p["train_fraction"]), p["seed"])
    missing = manifest.counts[UNASSIGNED]
    notes = manifest.notes
    if missing:
        notes = notes + (f"{missing} samples left unassigned by policy {policy.policy_id}",)
    return manifest.replace(policy=policy, notes=notes)


def _split_group_random(manifest: Manifest, group_key: str, train_fraction: float, seed) -> Manifest:
    groups = sorted({s.group_keys[group_key] for s in manifest.samples})
    n_train = int(math.floor(len(groups) * train_fraction + 1e-9))
    ranked = sorted(groups, key=lambda g: (stable_unit_hash(g, seed), g))
    assignment = {g: ("train" if i < n_train else "test") for i, g in enumerate(ranked)}
    return split_by_group(manifest, group_key, assignment)


def build_manifest(dataset_id: str, raw_root=None, policy: SplitPolicy | None = None,
                   registry: TaskRegistry | None = None) -> Manifest:
    registry = registry or load_builtin_catalog()
    policy = policy or default_policy(dataset_id, registry)
    if dataset_id in registry.synthetic_corpora:
        samples = generate_samples(registry.synthetic_corpora[dataset_id], registry)
        manifest = Manifest(dataset_id, tuple(samples))
    elif dataset_id in READERS:
        result = READERS[dataset_id](raw_root)
        if result.excluded:
            log.warning("%s: %d entries excluded (unreadable or missing audio)", dataset_id, len(result.excluded))
        manifest = Manifest(dataset_id, tuple(result.samples), excluded=tuple(result.excluded),
                            notes=tuple(result.notes))
    else:
        raise ManifestError(f"unknown dataset {dataset_id!r}")
    note = registry.notes.get(dataset_id)
    if note:
        manifest = manifest.replace(notes=manifest.notes + (note,))
    return apply_policy(manifest, policy, registry)
