"""Deterministic synthetic corpora (desk-scale test doubles for real datasets)."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..errors import ManifestError
from ..tasks import TaskRegistry
from ..utils import stable_int
from .audio import SyntheticDescriptor
from .manifest import SPLITS, Sample

DURATION_RANGE_S = (0.12, 0.20)


def generate_samples(corpus: Mapping, registry: TaskRegistry) -> list[Sample]:
    """Samples of a synthetic corpus, each carrying its designated split.

    ``per_class`` gives (train, validation, test) counts for every class;
    ``class_counts`` gives unsplit per-class totals.
    """
    corpus_id = corpus["id"]
    tasks = registry.tasks_for_dataset(corpus_id)
    if not tasks:
        raise ManifestError(f"synthetic corpus {corpus_id!r} has no registered task")
    task = tasks[0]
    rng = np.random.default_rng(stable_int("corpus", corpus_id, corpus.get("seed", 0)))
    raw_labels = {k: v for k, v in (corpus.get("raw_labels") or {}).items()}
    lo, hi = corpus.get("duration_range", DURATION_RANGE_S)

    plan: list[tuple[str | None, str]] = []
    if task.is_classification:
        classes = task.label_space.classes
        if "class_counts" in corpus:
            for cls in classes:
                plan += [(cls, "unassigned")] * int(corpus["class_counts"].get(cls, 0))
        else:
            per_class = corpus["per_class"]
            for split, n in zip(SPLITS, per_class):
                for cls in classes:
                    plan += [(cls, split)] * int(n)
    else:
        per_class = corpus["per_class"]
        for split, n in zip(SPLITS, per_class):
            plan += [(None, split)] * int(n)

    samples = []
    for k, (cls, split) in enumerate(plan):
        sid = f"{corpus_id}_{k:05d}"
        dur = float(np.round(rng.uniform(lo, hi), 6))
        if cls is not None:
            desc = SyntheticDescriptor(corpus_id, sid, dur, latent=cls)
            label = raw_labels.get(cls, cls)
        else:
            y = float(np.round(rng.uniform(0.0, 1.0), 6))
            desc = SyntheticDescriptor(corpus_id, sid, dur, target=y)
            label = y
        samples.append(Sample(
            sample_id=sid,
            audio_ref=desc.to_ref(),
            duration_s=dur,
            sample_rate_hz=16000,
            labels={task.task_id: label},
            split=split,
            group_keys={"speaker": f"spk{k % 10:02d}", "designated": split},
        ))
    return samples
