"""The downstream probe: projection, Transformer encoder and a two-layer head.

Sequence features ``(L, h)`` are projected to the working width ``d`` by a
bias-free matrix, encoded, and the head reads position 0 of the encoder
output. Fixed-length handcrafted vectors skip the projection and encoder and
go straight into the head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError, DimensionMismatch, WrongPath

POOLINGS = ("prepended_token", "first_frame")
PATHS = ("sequence", "vector")


@dataclass
class ProbeConfig:
    d: int = 768
    encoder_layers: int = 2
    attention_heads: int = 8
    encoder_dropout: float = 0.1
    classifier_dropout: float = 0.5
    kind: str = "classification"
    num_classes: int = 2
    pooling: str = "prepended_token"
    ff_mult: int = 4

    def validate(self) -> None:
        if self.d <= 0 or self.encoder_layers < 1 or self.attention_heads < 1:
            raise ConfigError("probe needs d > 0, encoder_layers >= 1, attention_heads >= 1")
        if self.d % self.attention_heads:
            raise ConfigError(f"d={self.d} is not divisible by {self.attention_heads} heads")
        for name in ("encoder_dropout", "classifier_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.kind not in ("classification", "regression"):
            raise ConfigError(f"unknown probe kind {self.kind!r}")
        if self.kind == "classification" and self.num_classes < 2:
            raise ConfigError("classification probes need at least 2 classes")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}")

    @property
    def num_outputs(self) -> int:
        return self.num_classes if self.kind == "classification" else 1

    def to_dict(self) -> dict:
        return asdict(self)


def fuse_layers(all_layers, fusion_weights):
    """Softmax-weighted sum over the layer axis: (num_layers, ..., h) -> (..., h).

    Works on torch tensors (differentiable) and on numpy arrays.
    """
    if isinstance(all_layers, np.ndarray):
        w = np.asarray(fusion_weights, dtype=np.float64)
        if w.shape != (all_layers.shape[0],):
            raise DimensionMismatch(f"{w.shape[0] if w.ndim else 0} fusion weights for {all_layers.shape[0]} layers")
        e = np.exp(w - w.max())
        s = e / e.sum()
        return np.tensordot(s, all_layers, axes=(0, 0))
    w = fusion_weights
    if w.dim() != 1 or w.shape[0] != all_layers.shape[0]:
        raise DimensionMismatch(f"{tuple(w.shape)} fusion weights for {all_layers.shape[0]} layers")
    s = torch.softmax(w, dim=0).to(all_layers.dtype)
    return torch.tensordot(s, all_layers, dims=([0], [0]))


class Probe(nn.Module):
    def __init__(self, config: ProbeConfig, input_dim: int, path: str = "sequence",
                 fused_layers: int | None = None):
        super().__init__()
        config.validate()
        if path not in PATHS:
            raise ConfigError(f"path must be one of {PATHS}")
        if path == "vector" and fused_layers:
            raise ConfigError("layer fusion applies to sequence features only")
        self.config = config
        self.input_dim = int(input_dim)
        self.path = path
        self.fused_layers = int(fused_layers or 0)
        d = config.d
        if path == "sequence":
            self.projection = nn.Linear(input_dim, d, bias=False)
            if config.pooling == "prepended_token":
                self.cls_token = nn.Parameter(torch.randn(1, 1, d) * 0.02)
            layer = nn.TransformerEncoderLayer(
                d, config.attention_heads, dim_feedforward=config.ff_mult * d,
                dropout=config.encoder_dropout, batch_first=True)
            self.encoder = nn.TransformerEncoder(layer, config.encoder_layers, enable_nested_tensor=False)
            head_in = d
        else:
            head_in = input_dim
        self.classifier = nn.Sequential(
            nn.Linear(head_in, d), nn.ReLU(), nn.Dropout(config.classifier_dropout),
            nn.Linear(d, config.num_outputs))
        if self.fused_layers:
            # created last and without drawing random numbers, so fused and
            # last-layer probes start from identical parameters under one seed
            self.fusion_weights = nn.Parameter(torch.zeros(self.fused_layers))

    @property
    def is_fusion(self) -> bool:
        return self.fused_layers > 0

    def fusion_distribution(self) -> torch.Tensor | None:
        return torch.softmax(self.fusion_weights, dim=0) if self.is_fusion else None

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Raw head outputs (logits or the regression value) for a batch.

        ``x`` is (B, L, h), (B, num_layers, L, h) for fusion probes, or (B, h)
        on the vector path. ``pad_mask`` is (B, L) with True on padding.
        """
        if self.path == "vector":
            if x.dim() != 2:
                raise WrongPath(f"vector probe received a {x.dim() - 1}-d per-sample payload")
            if x.shape[-1] != self.input_dim:
                raise DimensionMismatch(f"feature dim {x.shape[-1]} != {self.input_dim}")
            return self.classifier(x)
        expected = 4 if self.is_fusion else 3
        if x.dim() != expected:
            raise WrongPath(f"sequence probe expects {expected}-d batches, got shape {tuple(x.shape)}")
        if x.shape[-1] != self.input_dim:
            raise DimensionMismatch(f"feature dim {x.shape[-1]} != projection input {self.input_dim}")
        if x.shape[-2] < 1:
            raise DimensionMismatch("empty sequence")
        if self.is_fusion:
            if x.shape[1] != self.fused_layers:
                raise DimensionMismatch(f"{x.shape[1]} layers for {self.fused_layers} fusion weights")
            x = fuse_layers(x.transpose(0, 1), self.fusion_weights)
        z = self.projection(x)
        if pad_mask is None:
            pad_mask = torch.zeros(z.shape[:2], dtype=torch.bool, device=z.device)
        if self.config.pooling == "prepended_token":
            z = torch.cat([self.cls_token.expand(z.shape[0], -1, -1), z], dim=1)
            pad_mask = torch.cat([torch.zeros_like(pad_mask[:, :1]), pad_mask], dim=1)
        h = self.encoder(z, src_key_padding_mask=pad_mask)
        return self.classifier(h[:, 0])

    def predict(self, x: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Class probabilities (B, C) or scalar predictions (B,)."""
        out = self.forward(x, pad_mask)
        if self.config.kind == "classification":
            return torch.softmax(out, dim=-1)
        return out[:, 0]


def _single(features, probe: Probe) -> torch.Tensor:
    p = next(probe.parameters())
    return torch.as_tensor(np.asarray(features), dtype=p.dtype, device=p.device)


def forward_sequence(features, probe: Probe) -> torch.Tensor:
    """Probabilities over C (or the scalar prediction) for one (L, h) sequence."""
    if probe.path != "sequence":
        raise WrongPath("forward_sequence needs a sequence probe")
    x = _single(features, probe)
    if x.dim() != (3 if probe.is_fusion else 2):
        raise WrongPath(f"sequence path received shape {tuple(x.shape)}")
    if x.shape[-2] < 1:
        raise DimensionMismatch("empty sequence")
    probe.eval()
    with torch.no_grad():
        return probe.predict(x.unsqueeze(0))[0]


def forward_vector(features, probe: Probe) -> torch.Tensor:
    if probe.path != "vector":
        raise WrongPath("forward_vector needs a vector probe")
    x = _single(features, probe)
    if x.dim() != 1:
        raise WrongPath(f"vector path received a sequence payload of shape {tuple(x.shape)}")
    probe.eval()
    with torch.no_grad():
        return probe.predict(x.unsqueeze(0))[0]


def count_parameters(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)
