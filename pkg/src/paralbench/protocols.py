"""Evaluation protocols: within-corpus, cross-corpus, layer sweep, fusion and LoRA comparisons.

Every run ends in a ``ResultRecord``. Failures are caught and recorded with
status ``failed`` (or ``skipped`` when the protocol does not apply), so a
grid over many extractors never has silent gaps.
"""

from __future__ import annotations

import copy
import logging
import re
import time
import traceback
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .corpus.audio import load_audio
from .corpus.build import build_manifest
from .corpus.manifest import Manifest
from .errors import DataError, EmptyMapping, HookUnsupported, ParalbenchError
from .features import FeatureCache, LayerSpec, get_extractor, get_or_extract, make_synthetic_extractor
from .features.catalog import ExtractorCatalog, load_extractor_catalog
from .features.extractors import Extractor
from .features.spec import ExtractorSpec
from .metrics import classification_report, regression_report
from .probe import (
    ExampleSet,
    LoraConfig,
    MeanBaseline,
    Pipeline,
    ProbeConfig,
    TrainConfig,
    apply_lora,
    build_probe,
    count_parameters,
    fit,
    load_probe,
    make_backbone_extractor,
    parameter_checksums,
    save_probe,
)
from .store import ResultRecord, ResultsStore, RunSpec, environment_fingerprint
from .tasks import LabelMapping, TaskRegistry, TaskSpec, build_label_mapping, load_builtin_catalog, resolve_label

log = logging.getLogger(__name__)

_SYNTH_ID = re.compile(r"synthetic_s(\d+)_h(\d+)_l(\d+)_k(\d+)(_vec)?$")
_BACKBONE_ID = re.compile(r"backbone_s(\d+)_h(\d+)_l(\d+)$")


def sweep_layers(num_layers: int, stride: int) -> list[int]:
    """{0, s, 2s, ...} below num_layers, plus the last layer."""
    if num_layers < 1 or stride < 1:
        raise ValueError("num_layers and stride must be >= 1")
    return sorted(set(range(0, num_layers, stride)) | {num_layers - 1})


class Harness:
    """Everything a run needs: tasks, extractors, manifests, cache, store."""

    def __init__(self, registry: TaskRegistry | None = None, extractors: ExtractorCatalog | None = None,
                 cache: FeatureCache | None = None, store: ResultsStore | None = None,
                 raw_roots: Mapping[str, str] | None = None, manifest_dir=None,
                 checkpoint_dir=None, config_hash: str = ""):
        self.registry = registry or load_builtin_catalog()
        self.extractors = extractors or load_extractor_catalog()
        self.cache = cache
        self.store = store
        self.raw_roots = dict(raw_roots or {})
        self.manifest_dir = Path(manifest_dir) if manifest_dir else None
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.config_hash = config_hash
        self._manifests: dict[str, Manifest] = {}
        self._instances: dict[str, Extractor] = {}

    # resources

    def add_manifest(self, manifest: Manifest) -> None:
        self._manifests[manifest.dataset_id] = manifest

    def manifest(self, dataset_id: str) -> Manifest:
        if dataset_id not in self._manifests:
            path = self.manifest_dir / f"{dataset_id}.jsonl" if self.manifest_dir else None
            if path is not None and path.exists():
                self._manifests[dataset_id] = Manifest.load(path)
            else:
                self._manifests[dataset_id] = build_manifest(
                    dataset_id, self.raw_roots.get(dataset_id), registry=self.registry)
        return self._manifests[dataset_id]

    def add_extractor(self, spec: ExtractorSpec) -> None:
        self.extractors.add(spec, replace=True)
        self._instances.pop(spec.extractor_id, None)

    def extractor_spec(self, extractor_id: str) -> ExtractorSpec:
        if extractor_id not in self.extractors:
            m = _SYNTH_ID.match(extractor_id)
            b = _BACKBONE_ID.match(extractor_id)
            if m:
                seed, h, nl, k = (int(g) for g in m.groups()[:4])
                self.extractors.add(make_synthetic_extractor(seed, h, nl, k,
                                                             output="vector" if m.group(5) else "sequence"))
            elif b:
                seed, h, nl = (int(g) for g in b.groups())
                self.extractors.add(make_backbone_extractor(seed, h, nl))
        return self.extractors.get(extractor_id)

    def extractor(self, extractor_id: str) -> Extractor:
        if extractor_id not in self._instances:
            self._instances[extractor_id] = get_extractor(self.extractor_spec(extractor_id))
        return self._instances[extractor_id]

    # data

    def examples(self, task: TaskSpec, manifest: Manifest, extractor: Extractor | None, layer: LayerSpec,
                 split: str, mapping: LabelMapping | None = None, waveform: bool = False) -> ExampleSet:
        samples = manifest.task_samples(task, split)
        targets, kept = [], []
        space = manifest.task_label_space(task)
        for s in samples:
            raw = s.labels[task.task_id]
            if not task.is_classification:
                targets.append(task.target.normalize(raw))
            elif mapping is not None:
                idx = mapping.source_index(raw)
                if idx is None:
                    continue
                targets.append(idx)
            else:
                targets.append(resolve_label(space, raw))
            kept.append(s)
        dtype = np.int64 if task.is_classification else np.float64
        if waveform:
            rate = int(extractor.spec.input_rate_hz)
            inputs = [load_audio(s.audio_ref, rate)[0] for s in kept]
        elif extractor is None:
            inputs = [np.zeros(1, dtype=np.float32) for _ in kept]
        else:
            inputs = [get_or_extract(self.cache, extractor, s, layer).payload for s in kept]
        return ExampleSet(inputs, np.asarray(targets, dtype=dtype), [s.sample_id for s in kept], waveform)

    def checkpoint_path(self, spec_hash: str) -> Path | None:
        return self.checkpoint_dir / f"{spec_hash}.pt" if self.checkpoint_dir else None


@dataclass
class Comparison:
    """Two runs under one seed and config, with metric deltas (second minus first)."""

    first: ResultRecord
    second: ResultRecord
    labels: tuple[str, str]
    delta: dict = field(default_factory=dict)

    @classmethod
    def of(cls, first: ResultRecord, second: ResultRecord, labels: tuple[str, str]) -> "Comparison":
        delta = {}
        if first.ok and second.ok:
            delta = {k: second.metrics[k] - first.metrics[k] for k in first.metrics if k in second.metrics}
        return cls(first, second, labels, delta)


# record helpers


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _record(harness: Harness, spec: RunSpec, status: str, started: float, protocol: str | None = None,
            **fields) -> ResultRecord:
    return ResultRecord(
        spec_hash=spec.hash(), spec=spec.to_dict(), protocol=protocol or spec.protocol,
        task_id=spec.task_id, extractor_id=spec.extractor_id, layer=spec.layer, status=status,
        seed=spec.seed, config_hash=harness.config_hash, env=environment_fingerprint(),
        wall_clock_s=round(time.perf_counter() - started, 3), timestamp=_now(), **fields)


def _failure(harness, spec, started, exc: BaseException, protocol=None, extra=None) -> ResultRecord:
    status = "skipped" if isinstance(exc, HookUnsupported) else "failed"
    log.warning("run %s %s: %s: %s", spec.hash(), status, type(exc).__name__, exc)
    detail = f"{type(exc).__name__}: {exc}"
    if not isinstance(exc, ParalbenchError):
        detail += "\n" + "".join(traceback.format_exception(type(exc), exc, exc.__traceback__)[-3:])
    return _record(harness, spec, status, started, protocol, error=detail, extra=dict(extra or {}))


def _store(harness: Harness, record: ResultRecord) -> ResultRecord:
    if harness.store is not None:
        harness.store.append(record)
    return record


def _cached(harness: Harness, spec: RunSpec, force: bool) -> ResultRecord | None:
    if force or harness.store is None:
        return None
    return harness.store.latest_ok(spec.hash())


def _history_summary(history: dict) -> dict:
    out = {"epochs": history.get("epochs", [])}
    steps = history.get("step_loss", [])
    if steps:
        out["first_step_loss"] = steps[0]
        out["final_step_loss"] = steps[-1]
        out["steps"] = len(steps)
    if history.get("lr"):
        out["initial_lr"] = history["lr"][0]
    fs = history.get("fusion_sum")
    if fs:
        out["fusion_sum_max_dev"] = float(max(abs(v - 1.0) for v in fs))
        out["fusion_sum_checks"] = len(fs)
    if "fusion_weights" in history:
        out["fusion_weights"] = history["fusion_weights"]
    return out


# training core


@dataclass
class _Trained:
    trained: object
    task: TaskSpec
    manifest: Manifest
    extractor: Extractor | None
    layer: LayerSpec
    class_names: tuple[str, ...]
    waveform: bool = False
    counts: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _probe_config(spec: RunSpec, task: TaskSpec, num_classes: int) -> ProbeConfig:
    cfg = ProbeConfig(kind=task.kind, num_classes=num_classes if task.is_classification else 2)
    for k, v in dict(spec.probe).items():
        if not hasattr(cfg, k):
            raise ParalbenchError(f"unknown probe option {k!r}")
        setattr(cfg, k, v)
    return cfg


def _train_config(spec: RunSpec) -> TrainConfig:
    return TrainConfig.from_dict({**dict(spec.train), "seed": spec.seed})


def _train(harness: Harness, spec: RunSpec) -> _Trained:
    task = harness.registry.get(spec.task_id)
    manifest = harness.manifest(task.dataset_id)
    space = manifest.task_label_space(task)
    class_names = space.classes if task.is_classification else ()
    if spec.architecture == "mean_baseline":
        if task.is_classification:
            raise ParalbenchError("the mean baseline applies to regression tasks only")
        train = harness.examples(task, manifest, None, LayerSpec.last(), "train")
        return _Trained(MeanBaseline().fit(train), task, manifest, None, LayerSpec.last(), (),
                        counts={"train": len(train)})

    ex_spec = harness.extractor_spec(spec.extractor_id)
    extractor = harness.extractor(spec.extractor_id)
    layer = LayerSpec.parse(spec.layer)
    layer.validate_for(ex_spec)
    path = "vector" if ex_spec.is_vector else "sequence"
    fused = ex_spec.num_layers if layer.mode == "all_layers" else None
    probe_cfg = _probe_config(spec, task, len(class_names))
    train_cfg = _train_config(spec)
    waveform = spec.variant in ("frozen_backbone", "lora")
    extra: dict = {}
    backbone = None
    if waveform:
        base = getattr(extractor, "backbone", None)
        if base is None:
            raise HookUnsupported(f"{spec.extractor_id} exposes no backbone for end-to-end training")
        if spec.variant == "lora":
            lora_cfg = LoraConfig.from_dict(spec.lora)
            adapted, registry = apply_lora(base, lora_cfg)
            backbone = adapted
            extra["lora_parameters"] = sum(p.numel() for p in registry.values())
            extra["lora"] = lora_cfg.to_dict()
        else:
            backbone = copy.deepcopy(base)
            for p in backbone.parameters():
                p.requires_grad_(False)
        extra["backbone_parameters"] = sum(p.numel() for n, p in backbone.named_parameters() if "lora_" not in n)
        extra["_checksums_before"] = parameter_checksums(backbone)

    train = harness.examples(task, manifest, extractor, layer, "train", waveform=waveform)
    val = harness.examples(task, manifest, extractor, layer, "validation", waveform=waveform)
    if len(train) == 0:
        raise DataError(f"{task.task_id}: empty train split")
    in_dim = ex_spec.hidden_dim
    probe = build_probe(probe_cfg, in_dim, path, fused, spec.seed)
    pipeline = Pipeline(probe, backbone, layer if waveform else None)
    trained = fit(pipeline, train, val if len(val) else None, task.kind, train_cfg, class_names)
    if waveform:
        before = extra.pop("_checksums_before")
        after = parameter_checksums(backbone)
        extra["backbone_unchanged"] = before == after
        extra["trainable_parameters"] = count_parameters(pipeline, trainable_only=True)
        extra["probe_parameters"] = count_parameters(probe)
    return _Trained(trained, task, manifest, extractor, layer, tuple(class_names), waveform,
                    {"train": len(train), "validation": len(val)}, extra)


def _evaluate(t: _Trained, data: ExampleSet, task_id: str, class_names) -> tuple[dict, dict]:
    if isinstance(t.trained, MeanBaseline):
        pred = t.trained.predict(data)
        report = regression_report(task_id, data.targets, pred)
    else:
        pred = t.trained.predict(data)
        if t.task.is_classification:
            report = classification_report(task_id, data.targets, pred.argmax(axis=1), class_names,
                                           t.task.metrics or ("WA", "UA", "WF1"))
        else:
            report = regression_report(task_id, data.targets, pred)
    return report.values, report.to_dict()


# protocols


def run_within_corpus(harness: Harness, spec: RunSpec, force: bool = False,
                      protocol: str | None = None, extra: dict | None = None) -> ResultRecord:
    spec = spec if spec.protocol == "within" else spec.replace(protocol="within")
    hit = _cached(harness, spec, force)
    if hit is not None:
        return hit
    started = time.perf_counter()
    try:
        t = _train(harness, spec)
        test = harness.examples(t.task, t.manifest, t.extractor, t.layer, "test", waveform=t.waveform)
        if len(test) == 0:
            raise DataError(f"{spec.task_id}: empty test split")
        metrics, report = _evaluate(t, test, spec.task_id, t.class_names)
        info = {**(extra or {}), **t.extra, "counts": {**t.counts, "test": len(test)}}
        history = {}
        if not isinstance(t.trained, MeanBaseline):
            history = _history_summary(t.trained.history)
            info["best_epoch"] = t.trained.best_epoch
            info["selected_on"] = t.trained.selected_on
            ckpt = harness.checkpoint_path(spec.hash())
            if ckpt is not None and not t.waveform:
                save_probe(ckpt, t.trained, harness.extractor_spec(spec.extractor_id).binding(), spec.task_id)
                info["checkpoint"] = str(ckpt)
        record = _record(harness, spec, "ok", started, protocol, metrics=metrics, report=report,
                         history=history, extra=info)
    except Exception as exc:
        record = _failure(harness, spec, started, exc, protocol, extra)
    return _store(harness, record)


def _cross_filter(harness: Harness, spec: RunSpec, test_task: TaskSpec, mapping: LabelMapping,
                  extractor, layer) -> tuple[ExampleSet, dict]:
    manifest = harness.manifest(test_task.dataset_id)
    original = manifest.task_samples(test_task, "test")
    data = harness.examples(test_task, manifest, extractor, layer, "test", mapping=mapping)
    space = manifest.task_label_space(test_task)
    kept_names = Counter(mapping.source_space.classes[i] for i in data.targets)
    dropped = Counter(space.lookup(s.labels[test_task.task_id]) for s in original
                      if mapping.source_index(s.labels[test_task.task_id]) is None)
    info = {
        "original_test_count": len(original),
        "filtered_test_count": len(data),
        "dropped_target_classes": list(mapping.dropped_target_classes),
        "dropped_counts": dict(sorted(dropped.items())),
        "filtered_label_counts": dict(sorted(kept_names.items())),
        "mapping": [list(p) for p in mapping.pairs],
    }
    return data, info


def run_cross_corpus(harness: Harness, spec: RunSpec, force: bool = False) -> ResultRecord:
    hit = _cached(harness, spec, force)
    if hit is not None:
        return hit
    started = time.perf_counter()
    try:
        train_task = harness.registry.get(spec.task_id)
        test_task = harness.registry.get(spec.test_task_id)
        if not (train_task.is_classification and test_task.is_classification):
            raise ParalbenchError("cross-corpus runs need two classification tasks")
        train_space = harness.manifest(train_task.dataset_id).task_label_space(train_task)
        test_space = harness.manifest(test_task.dataset_id).task_label_space(test_task)
        mapping = build_label_mapping(train_space, test_space)
        within = spec.replace(protocol="within", test_task_id=None)
        ckpt = harness.checkpoint_path(within.hash())
        reused = False
        ex_spec = harness.extractor_spec(spec.extractor_id)
        layer = LayerSpec.parse(spec.layer)
        if ckpt is not None and ckpt.exists():
            trained, _ = load_probe(ckpt, ex_spec.binding())
            reused = True
        else:
            t = _train(harness, within)
            trained = t.trained
            if ckpt is not None:
                save_probe(ckpt, trained, ex_spec.binding(), spec.task_id)
        extractor = harness.extractor(spec.extractor_id)
        data, info = _cross_filter(harness, spec, test_task, mapping, extractor, layer)
        if len(data) == 0:
            raise EmptyMapping(f"no {test_task.task_id} test sample survives the label mapping")
        assert all(0 <= y < len(train_space) for y in data.targets)
        pred = trained.predict(data)
        report = classification_report(f"{spec.task_id}->{spec.test_task_id}", data.targets,
                                       pred.argmax(axis=1), train_space.classes)
        report.notes.append("UA averages classes present in the filtered test set")
        info.update(reused_checkpoint=reused, within_spec_hash=within.hash())
        record = _record(harness, spec, "ok", started, metrics=report.values, report=report.to_dict(),
                         history=_history_summary(trained.history), extra=info)
    except Exception as exc:
        record = _failure(harness, spec, started, exc)
    return _store(harness, record)


def run_layer_sweep(harness: Harness, spec: RunSpec, force: bool = False) -> dict[int, ResultRecord]:
    try:
        ex_spec = harness.extractor_spec(spec.extractor_id)
        if not ex_spec.is_sequence:
            raise ParalbenchError(f"{spec.extractor_id} has no layers to sweep")
        layers = sweep_layers(ex_spec.num_layers, int(spec.stride))
    except Exception as exc:
        return {-1: _store(harness, _failure(harness, spec, time.perf_counter(), exc))}
    out = {}
    for k in layers:
        sub = spec.replace(protocol="within", layer=str(LayerSpec.at(k)), stride=None)
        out[k] = run_within_corpus(harness, sub, force, protocol="layer_sweep",
                                   extra={"sweep_layer": k, "stride": int(spec.stride),
                                          "sweep_spec_hash": spec.hash()})
    return out


def run_fusion_compare(harness: Harness, spec: RunSpec, force: bool = False) -> Comparison:
    pair = spec.hash()
    last = run_within_corpus(harness, spec.replace(protocol="within", layer="last_hidden"), force,
                             protocol="fusion_compare", extra={"variant": "last_hidden", "pair": pair})
    fused = run_within_corpus(harness, spec.replace(protocol="within", layer="all_layers"), force,
                              protocol="fusion_compare", extra={"variant": "fusion", "pair": pair})
    return Comparison.of(last, fused, ("last_hidden", "fusion"))


def run_lora_compare(harness: Harness, spec: RunSpec, lora_cfg: LoraConfig | None = None,
                     force: bool = False) -> Comparison:
    lora_cfg = lora_cfg or LoraConfig.from_dict(spec.lora)
    pair = spec.hash()
    base = spec.replace(protocol="within", lora=None)
    frozen = run_within_corpus(harness, base.replace(variant="frozen_backbone"), force,
                               protocol="lora_compare", extra={"variant": "frozen", "pair": pair})
    adapted = run_within_corpus(harness, base.replace(variant="lora", lora=lora_cfg.to_dict()), force,
                                protocol="lora_compare", extra={"variant": "lora", "pair": pair})
    return Comparison.of(frozen, adapted, ("frozen", "lora"))


def execute(harness: Harness, spec: RunSpec, force: bool = False) -> list[ResultRecord]:
    """Run any protocol and return the records it produced (or reused)."""
    if spec.protocol == "within":
        return [run_within_corpus(harness, spec, force)]
    if spec.protocol == "cross_corpus":
        return [run_cross_corpus(harness, spec, force)]
    if spec.protocol == "layer_sweep":
        return list(run_layer_sweep(harness, spec, force).values())
    if spec.protocol == "fusion_compare":
        c = run_fusion_compare(harness, spec, force)
        return [c.first, c.second]
    c = run_lora_compare(harness, spec, force=force)
    return [c.first, c.second]


def replay(harness: Harness, record: ResultRecord) -> ResultRecord:
    """Re-run a stored record's spec and seed, bypassing dedup, without storing the result."""
    spec = record.run_spec()
    store, harness.store = harness.store, None
    try:
        if spec.protocol == "cross_corpus":
            ckpt_dir, harness.checkpoint_dir = harness.checkpoint_dir, None
            try:
                return run_cross_corpus(harness, spec, force=True)
            finally:
                harness.checkpoint_dir = ckpt_dir
        return run_within_corpus(harness, spec, force=True, protocol=record.protocol)
    finally:
        harness.store = store


def metrics_match(a: ResultRecord, b: ResultRecord, tol: float = 1e-6) -> bool:
    if set(a.metrics) != set(b.metrics):
        return False
    return all(abs(a.metrics[k] - b.metrics[k]) <= tol for k in a.metrics)


__all__ = ["Harness", "Comparison", "sweep_layers", "run_within_corpus", "run_cross_corpus",
           "run_layer_sweep", "run_fusion_compare", "run_lora_compare", "execute", "replay",
           "metrics_match"]
