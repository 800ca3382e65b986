"""A small randomly initialised speech transformer used as a LoRA test double.

Module names follow the common Hugging Face convention (``q_proj``,
``k_proj``, ``v_proj``, ``out_proj``) so adapter injection works the same
way it would on a real checkpoint.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ..errors import AudioTooShort, ConfigError
from ..features.adapters import register_adapter
from ..features.extractors import Extractor
from ..features.spec import ExtractorSpec
from ..utils import digest


class BackboneLayer(nn.Module):
    def __init__(self, h: int, heads: int, ff: int):
        super().__init__()
        self.heads = heads
        self.q_proj = nn.Linear(h, h)
        self.k_proj = nn.Linear(h, h)
        self.v_proj = nn.Linear(h, h)
        self.out_proj = nn.Linear(h, h)
        self.attn_norm = nn.LayerNorm(h)
        self.fc1 = nn.Linear(h, ff)
        self.fc2 = nn.Linear(ff, h)
        self.ffn_norm = nn.LayerNorm(h)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        B, L, h = x.shape
        dh = h // self.heads

        def split(t):
            return t.view(B, L, self.heads, dh).transpose(1, 2)

        q, k, v = split(self.q_proj(x)), split(self.k_proj(x)), split(self.v_proj(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        scores = scores.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        ctx = (torch.softmax(scores, dim=-1) @ v).transpose(1, 2).reshape(B, L, h)
        x = self.attn_norm(x + self.out_proj(ctx))
        return self.ffn_norm(x + self.fc2(F.gelu(self.fc1(x))))


class SyntheticTransformerBackbone(nn.Module):
    def __init__(self, h: int = 768, num_layers: int = 2, heads: int = 12, frame_size: int = 320,
                 ff_mult: int = 4, seed: int = 0):
        super().__init__()
        if h % heads:
            raise ConfigError(f"hidden size {h} is not divisible by {heads} attention heads")
        self.h = h
        self.frame_size = frame_size
        # private RNG stream: building a backbone never shifts the global seed
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.feature_projection = nn.Linear(frame_size, h)
            self.layers = nn.ModuleList(BackboneLayer(h, heads, ff_mult * h) for _ in range(num_layers))

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def forward(self, waves: torch.Tensor, lengths: torch.Tensor | None = None):
        """(B, n) padded waveforms -> (list of (B, L, h) per layer, (B, L) pad mask)."""
        B, n = waves.shape
        if lengths is None:
            lengths = torch.full((B,), n, dtype=torch.long)
        frames_per = torch.div(lengths, self.frame_size, rounding_mode="floor")
        if (frames_per < 1).any():
            raise AudioTooShort(f"waveform shorter than one {self.frame_size}-sample frame")
        L = int(frames_per.max())
        frames = waves[:, : L * self.frame_size].reshape(B, L, self.frame_size)
        pad_mask = torch.arange(L)[None, :] >= frames_per[:, None]
        x = self.feature_projection(frames)
        states = []
        for layer in self.layers:
            x = layer(x, pad_mask)
            states.append(x)
        return states, pad_mask


def default_heads(h: int) -> int:
    """12 heads when they divide h, otherwise the largest divisor of h below 12."""
    return next(n for n in range(12, 0, -1) if h % n == 0)


def make_backbone_extractor(seed: int = 0, h: int = 768, num_layers: int = 2, heads: int | None = None,
                            extractor_id: str | None = None) -> ExtractorSpec:
    heads = default_heads(h) if heads is None else heads
    options = {"seed": int(seed), "heads": int(heads), "frame_size": 320}
    eid = extractor_id or f"backbone_s{seed}_h{h}_l{num_layers}"
    version = digest({"options": options, "h": h, "num_layers": num_layers})
    return ExtractorSpec(eid, "ssl_sequence", h, num_layers, checkpoint_ref=f"synthetic-backbone:{seed}",
                         input_rate_hz=16000, version_hash=version, adapter="synthetic_backbone",
                         frame_rate_hz=50.0, options=options)


class BackboneExtractor(Extractor):
    """Frozen forward pass of a torch backbone exposed through the extractor contract."""

    def __init__(self, spec: ExtractorSpec, backbone: nn.Module | None = None):
        super().__init__(spec)
        o = spec.options
        self.backbone = backbone or SyntheticTransformerBackbone(
            spec.hidden_dim, spec.num_layers, int(o.get("heads", 12)), int(o.get("frame_size", 320)),
            seed=int(o.get("seed", 0)))
        self.backbone.eval()

    def encode(self, wave: np.ndarray, rate: int) -> np.ndarray:
        x = torch.as_tensor(np.asarray(wave, dtype=np.float32))[None]
        with torch.no_grad():
            states, _ = self.backbone(x)
        return torch.stack([s[0] for s in states]).numpy()


register_adapter("synthetic_backbone", BackboneExtractor)
