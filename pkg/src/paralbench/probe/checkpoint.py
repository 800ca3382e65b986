"""Versioned probe checkpoints bound to the extractor that produced their inputs."""

from __future__ import annotations

from pathlib import Path

import torch

from ..errors import BindingMismatch, ConfigError
from ..features.spec import LayerSpec
from .model import Probe, ProbeConfig
from .train import Pipeline, TrainConfig, TrainedProbe

CHECKPOINT_FORMAT = "paralbench-probe"
CHECKPOINT_VERSION = 1


def save_probe(path, trained: TrainedProbe, binding: dict, task_id: str = "", extra: dict | None = None) -> None:
    probe = trained.probe
    pipeline = trained.pipeline
    lora = {k: v.detach().clone() for k, v in pipeline.state_dict().items() if "lora_" in k}
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "probe_config": probe.config.to_dict(),
        "input_dim": probe.input_dim,
        "path": probe.path,
        "fused_layers": probe.fused_layers,
        "probe_state": probe.state_dict(),
        "fusion_weights": probe.fusion_weights.detach().clone() if probe.is_fusion else None,
        "lora": lora,
        "layer": str(pipeline.layer),
        "binding": dict(binding),
        "task_id": task_id,
        "kind": trained.kind,
        "class_names": list(trained.class_names),
        "train_config": trained.train_config.to_dict(),
        "history": trained.history,
        "best_epoch": trained.best_epoch,
        "selected_on": trained.selected_on,
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)


def load_probe(path, expected_binding: dict | None = None) -> tuple[TrainedProbe, dict]:
    """Rebuild a trained probe. Refuses features from a different extractor build."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != CHECKPOINT_FORMAT or blob.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: not a version {CHECKPOINT_VERSION} probe checkpoint")
    if expected_binding is not None:
        for key in ("extractor_id", "version_hash"):
            if blob["binding"].get(key) != expected_binding.get(key):
                raise BindingMismatch(
                    f"{path}: trained on {blob['binding']}, evaluation features come from {dict(expected_binding)}")
    probe = Probe(ProbeConfig(**blob["probe_config"]), blob["input_dim"], blob["path"], blob["fused_layers"] or None)
    probe.load_state_dict(blob["probe_state"])
    probe.eval()
    trained = TrainedProbe(Pipeline(probe, None, LayerSpec.parse(blob["layer"])), blob["kind"],
                           tuple(blob["class_names"]), TrainConfig.from_dict(blob["train_config"]),
                           blob["history"], blob["best_epoch"], blob["selected_on"])
    return trained, blob
