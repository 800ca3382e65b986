"""Low-rank adapters on a frozen backbone's attention projections."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import math
from dataclasses import dataclass

import torch
from torch import nn

from ..errors import ConfigError, HookUnsupported


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 8
    alpha: float = 16.0
    targets: tuple[str, ...] = ("q_proj", "v_proj")
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError("LoRA rank must be >= 1")
        if self.alpha <= 0:
            raise ConfigError("LoRA alpha must be > 0")

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def to_dict(self) -> dict:
        return {"rank": self.rank, "alpha": self.alpha, "targets": list(self.targets), "seed": self.seed}

    @classmethod
    def from_dict(cls, d) -> "LoraConfig":
        d = dict(d or {})
        if "targets" in d:
            d["targets"] = tuple(d["targets"])
        return cls(**d)


class LoRALinear(nn.Module):
    """``base(x) + (alpha / r) * B A x`` with A (r x in) random and B (out x r) zero."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float, generator: torch.Generator):
        super().__init__()
        self.base = base
        self.rank = rank
        self.scaling = alpha / rank
        bound = 1.0 / math.sqrt(base.in_features)
        a = (torch.rand(rank, base.in_features, generator=generator, dtype=base.weight.dtype) * 2 - 1) * bound
        self.lora_A = nn.Parameter(a)
        self.lora_B = nn.Parameter(torch.zeros(base.out_features, rank, dtype=base.weight.dtype))

    @property
    def in_features(self) -> int:
        return self.base.in_features

    @property
    def out_features(self) -> int:
        return self.base.out_features

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + (x @ self.lora_A.T @ self.lora_B.T) * self.scaling


def _backbone_of(adapter):
    if isinstance(adapter, nn.Module):
        return adapter
    backbone = getattr(adapter, "backbone", None)
    if isinstance(backbone, nn.Module):
        return backbone
    raise HookUnsupported(f"{type(adapter).__name__} exposes no torch backbone to adapt")


def apply_lora(adapter, cfg: LoraConfig = LoraConfig()):
    """Copy ``adapter``, freeze its backbone and wrap the target projections.

    Returns ``(adapted, registry)`` where registry maps parameter names to the
    only backbone tensors left trainable. The input object is not modified.
    """
    backbone = _backbone_of(adapter)
    targets = [(name, m) for name, m in backbone.named_modules()
               if name.rsplit(".", 1)[-1] in cfg.targets and isinstance(m, nn.Linear)]
    if not targets:
        raise HookUnsupported(f"no linear modules named {list(cfg.targets)} in {type(backbone).__name__}")
    adapted = copy.deepcopy(adapter)
    new_backbone = _backbone_of(adapted)
    for p in new_backbone.parameters():
        p.requires_grad_(False)
    # a private generator keeps the global RNG stream identical with and without LoRA
    gen = torch.Generator().manual_seed(cfg.seed)
    registry: dict[str, nn.Parameter] = {}
    for name, _ in targets:
        parent_name, _, child = name.rpartition(".")
        parent = new_backbone.get_submodule(parent_name) if parent_name else new_backbone
        wrapped = LoRALinear(getattr(parent, child), cfg.rank, cfg.alpha, gen)
        setattr(parent, child, wrapped)
        registry[f"{name}.lora_A"] = wrapped.lora_A
        registry[f"{name}.lora_B"] = wrapped.lora_B
    if hasattr(adapted, "spec") and not isinstance(adapted, nn.Module):
        spec = adapted.spec
        adapted.spec = dataclasses.replace(
            spec, extractor_id=f"{spec.extractor_id}+lora_r{cfg.rank}",
            version_hash=f"{spec.version_hash}+lora_r{cfg.rank}_a{cfg.alpha:g}_s{cfg.seed}")
    return adapted, registry


def lora_parameter_count(in_features: int, out_features: int, rank: int) -> int:
    return rank * (in_features + out_features)


def parameter_checksums(module: nn.Module, include_lora: bool = False) -> dict[str, str]:
    """sha256 of every parameter's bytes, keyed by name (LoRA factors skipped by default)."""
    out = {}
    for name, p in module.named_parameters():
        if not include_lora and ("lora_A" in name or "lora_B" in name):
            continue
        key = name.replace(".base.", ".")
        out[key] = hashlib.sha256(p.detach().cpu().contiguous().numpy().tobytes()).hexdigest()
    return out
