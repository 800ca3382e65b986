"""Probe training: batching, AdamW with polynomial decay, model selection."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError, DataError, TrainingDiverged
from ..features.spec import LayerSpec
from .losses import loss_ce_logits, loss_mae
from .model import Probe, ProbeConfig, count_parameters, fuse_layers


@dataclass
class TrainConfig:
    lr: float | None = None              # overrides the per-path default when set
    lr_deep: float = 5e-4
    lr_handcrafted: float = 5e-5
    weight_decay: float = 1e-2
    max_epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    decay_power: float = 1.0
    end_lr: float = 0.0
    select_on_validation: bool = True

    def validate(self) -> None:
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs and batch_size must be >= 1")
        for name in ("lr_deep", "lr_handcrafted"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.lr is not None and self.lr <= 0:
            raise ConfigError("lr must be > 0")

    def initial_lr(self, path: str) -> float:
        if self.lr is not None:
            return self.lr
        return self.lr_handcrafted if path == "vector" else self.lr_deep

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        return cls(**{k: v for k, v in dict(d).items() if k in cls.__dataclass_fields__})


def poly_lr(step: int, total_steps: int, lr0: float, power: float = 1.0, end_lr: float = 0.0) -> float:
    """Polynomial decay from lr0 at step 0 to end_lr at total_steps."""
    frac = min(step, total_steps) / max(1, total_steps)
    return (lr0 - end_lr) * (1.0 - frac) ** power + end_lr


@dataclass
class ExampleSet:
    """Per-sample payloads plus targets. ``waveform`` sets feed a backbone."""

    inputs: list
    targets: np.ndarray
    sample_ids: list[str]
    waveform: bool = False

    def __post_init__(self):
        if len(self.inputs) != len(self.targets) or len(self.inputs) != len(self.sample_ids):
            raise DataError("inputs, targets and sample ids differ in length")

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, idx: Sequence[int]) -> "ExampleSet":
        return ExampleSet([self.inputs[i] for i in idx], self.targets[list(idx)],
                          [self.sample_ids[i] for i in idx], self.waveform)


def collate(items: list, waveform: bool = False):
    """Stack a batch, padding the frame axis. Returns (x, pad_mask, lengths)."""
    first = np.asarray(items[0])
    if waveform:
        lengths = torch.tensor([len(w) for w in items], dtype=torch.long)
        x = torch.zeros(len(items), int(lengths.max()))
        for i, w in enumerate(items):
            x[i, : len(w)] = torch.as_tensor(np.asarray(w, dtype=np.float32))
        return x, None, lengths
    if first.ndim == 1:
        return torch.as_tensor(np.stack(items).astype(np.float32)), None, None
    axis = first.ndim - 2            # frame axis: 0 for (L, h), 1 for (num_layers, L, h)
    lengths = torch.tensor([np.asarray(a).shape[axis] for a in items], dtype=torch.long)
    L = int(lengths.max())
    shape = (len(items),) + tuple(first.shape[:axis]) + (L, first.shape[-1])
    x = torch.zeros(shape, dtype=torch.float32)
    for i, a in enumerate(items):
        n = np.asarray(a).shape[axis]
        if axis == 0:
            x[i, :n] = torch.as_tensor(a)
        else:
            x[i, :, :n] = torch.as_tensor(a)
    pad_mask = torch.arange(L)[None, :] >= lengths[:, None]
    return x, pad_mask, lengths


class Pipeline(nn.Module):
    """Probe, optionally fed end to end by a backbone run on raw waveforms."""

    def __init__(self, probe: Probe, backbone: nn.Module | None = None, layer: LayerSpec | None = None):
        super().__init__()
        self.probe = probe
        self.backbone = backbone
        self.layer = layer or LayerSpec.last()

    def forward(self, x, pad_mask=None, lengths=None):
        if self.backbone is not None:
            states, pad_mask = self.backbone(x, lengths)
            if self.layer.mode == "all_layers":
                x = torch.stack(states, dim=1)
            elif self.layer.mode == "index":
                x = states[self.layer.index]
            else:
                x = states[-1]
        return self.probe(x, pad_mask)


@dataclass
class TrainedProbe:
    pipeline: Pipeline
    kind: str
    class_names: tuple[str, ...]
    train_config: TrainConfig
    history: dict = field(default_factory=dict)
    best_epoch: int = 0
    selected_on: str = "final_epoch"

    @property
    def probe(self) -> Probe:
        return self.pipeline.probe

    def predict(self, data: ExampleSet, batch_size: int = 64) -> np.ndarray:
        return predict(self.pipeline, data, self.kind, batch_size)

    def trainable_parameters(self) -> int:
        return count_parameters(self.pipeline, trainable_only=True)


def predict(pipeline: nn.Module, data: ExampleSet, kind: str, batch_size: int = 64) -> np.ndarray:
    """Class probabilities (N, C) or predictions (N,), in evaluation mode."""
    was_training = pipeline.training
    pipeline.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            x, mask, lengths = collate(data.inputs[start:start + batch_size], data.waveform)
            out = pipeline(x, mask, lengths)
            outs.append(torch.softmax(out, dim=-1) if kind == "classification" else out[:, 0])
    pipeline.train(was_training)
    return torch.cat(outs).double().numpy() if outs else np.zeros((0,))


def _val_score(pipeline, data: ExampleSet, kind: str) -> float:
    """Selection score, higher is better: WA, or negated MAE."""
    pred = predict(pipeline, data, kind)
    if kind == "classification":
        return float(np.mean(pred.argmax(axis=1) == data.targets))
    return -float(np.mean(np.abs(pred - data.targets)))


def fit(pipeline: Pipeline, train: ExampleSet, validation: ExampleSet | None, kind: str,
        cfg: TrainConfig, class_names: Sequence[str] = ()) -> TrainedProbe:
    cfg.validate()
    if len(train) == 0:
        raise DataError("empty train split")
    torch.manual_seed(cfg.seed)            # dropout stream
    order_gen = torch.Generator().manual_seed(cfg.seed)
    params = [p for p in pipeline.parameters() if p.requires_grad]
    lr0 = cfg.initial_lr(pipeline.probe.path)
    optimizer = torch.optim.AdamW(params, lr=lr0, weight_decay=cfg.weight_decay)
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    total = steps_per_epoch * cfg.max_epochs
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: poly_lr(step, total, 1.0, cfg.decay_power, cfg.end_lr / lr0))
    targets = torch.as_tensor(train.targets)
    use_val = cfg.select_on_validation and validation is not None and len(validation) > 0
    history = {"epochs": [], "step_loss": [], "lr": [], "fusion_sum": []}
    probe = pipeline.probe
    if probe.is_fusion:
        history["fusion_sum"].append(float(probe.fusion_distribution().detach().sum()))
    best_score, best_state, best_epoch = -math.inf, None, cfg.max_epochs - 1
    step = 0
    for epoch in range(cfg.max_epochs):
        pipeline.train()
        perm = torch.randperm(len(train), generator=order_gen)
        epoch_loss, seen = 0.0, 0
        for start in range(0, len(train), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size].tolist()
            x, mask, lengths = collate([train.inputs[i] for i in idx], train.waveform)
            out = pipeline(x, mask, lengths)
            y = targets[idx]
            loss = loss_ce_logits(out, y) if kind == "classification" else loss_mae(out[:, 0], y)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss.item()} at epoch {epoch}, step {step}, "
                                       f"lr {scheduler.get_last_lr()[0]:.3g}")
            history["lr"].append(scheduler.get_last_lr()[0])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            scheduler.step()
            step += 1
            history["step_loss"].append(loss.item())
            if probe.is_fusion:
                history["fusion_sum"].append(float(probe.fusion_distribution().detach().sum()))
            epoch_loss += loss.item() * len(idx)
            seen += len(idx)
        entry = {"epoch": epoch, "train_loss": epoch_loss / seen}
        if use_val:
            score = _val_score(pipeline, validation, kind)
            entry["val_score"] = score
            if score > best_score:
                best_score, best_epoch = score, epoch
                best_state = copy.deepcopy(pipeline.state_dict())
        history["epochs"].append(entry)
    if best_state is not None:
        pipeline.load_state_dict(best_state)
    if probe.is_fusion:
        history["fusion_weights"] = probe.fusion_distribution().detach().double().tolist()
    pipeline.eval()
    return TrainedProbe(pipeline, kind, tuple(class_names), cfg, history, best_epoch,
                        "validation" if use_val else "final_epoch")


class MeanBaseline:
    """Predicts the training-target mean for every sample (regression reference)."""

    def __init__(self):
        self.mean = None

    def fit(self, train: ExampleSet) -> "MeanBaseline":
        if len(train) == 0:
            raise DataError("empty train split")
        self.mean = float(np.mean(np.asarray(train.targets, dtype=np.float64)))
        return self

    def predict(self, data: ExampleSet) -> np.ndarray:
        return np.full(len(data), self.mean, dtype=np.float64)


def build_probe(config: ProbeConfig, input_dim: int, path: str, fused_layers: int | None, seed: int) -> Probe:
    torch.manual_seed(seed)
    return Probe(config, input_dim, path, fused_layers)


__all__ = ["TrainConfig", "poly_lr", "ExampleSet", "collate", "Pipeline", "TrainedProbe", "fit",
           "predict", "MeanBaseline", "build_probe", "fuse_layers"]
