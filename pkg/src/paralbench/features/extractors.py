"""Extractor base class, long-audio chunking and the synthetic extractor."""

from __future__ import annotations

import math

import numpy as np

from ..corpus.audio import is_synthetic_ref, load_audio, parse_synthetic_ref
from ..corpus.manifest import Sample
from ..errors import AudioTooShort, ConfigError
from ..utils import digest, stable_int
from .spec import ExtractorSpec, FeatureRecord, LayerSpec, check_finite

DEFAULT_WINDOW_S = 30.0
DEFAULT_OVERLAP_S = 5.0


class Extractor:
    """Turns a sample into its full payload: (num_layers, L, h) or (h,).

    Subclasses implement ``encode(wave, rate)``. ``calls`` counts encoder
    invocations so cache behaviour can be observed from outside.
    """

    def __init__(self, spec: ExtractorSpec):
        self.spec = spec
        self.calls = 0

    @property
    def window_s(self) -> float:
        return float(self.spec.options.get("window_s", DEFAULT_WINDOW_S))

    @property
    def overlap_s(self) -> float:
        return float(self.spec.options.get("overlap_s", DEFAULT_OVERLAP_S))

    def preproc_params(self) -> dict:
        return {"input_rate_hz": int(self.spec.input_rate_hz), "mono": True,
                "window_s": self.window_s, "overlap_s": self.overlap_s}

    def encode(self, wave: np.ndarray, rate: int) -> np.ndarray:
        raise NotImplementedError

    def encode_sample(self, sample: Sample) -> np.ndarray:
        wave, rate = load_audio(sample.audio_ref, int(self.spec.input_rate_hz))
        self.calls += 1
        if self.spec.is_sequence and len(wave) > self.window_s * rate:
            return chunked_encode(self.encode, wave, rate, self.spec.frame_rate_hz,
                                  self.window_s, self.overlap_s)
        return self.encode(wave, rate)


def chunked_encode(encode, wave: np.ndarray, rate: int, frame_rate: float,
                   window_s: float = DEFAULT_WINDOW_S, overlap_s: float = DEFAULT_OVERLAP_S) -> np.ndarray:
    """Encode overlapping windows and average frames where windows overlap.

    Chunk starts are snapped to whole frames so every window's local frame
    grid lines up with the global one.
    """
    if not 0 <= overlap_s < window_s:
        raise ConfigError(f"overlap {overlap_s} must be in [0, window {window_s})")
    hop_frames = max(1, int(round((window_s - overlap_s) * frame_rate)))
    samples_per_frame = rate / frame_rate
    win = int(round(window_s * rate))
    total, count = None, None
    start_frame = 0
    while True:
        s0 = int(round(start_frame * samples_per_frame))
        if s0 >= len(wave):
            break
        part = encode(wave[s0:s0 + win], rate)
        n = part.shape[1]
        if total is None:
            est = int(math.ceil(len(wave) / samples_per_frame)) + n
            total = np.zeros((part.shape[0], est, part.shape[2]), dtype=np.float64)
            count = np.zeros(est, dtype=np.int64)
        end = min(start_frame + n, total.shape[1])
        total[:, start_frame:end] += part[:, : end - start_frame]
        count[start_frame:end] += 1
        if s0 + win >= len(wave):
            break
        start_frame += hop_frames
    used = int(np.nonzero(count)[0].max()) + 1
    return (total[:, :used] / count[None, :used, None]).astype(np.float32)


def extract(extractor: Extractor, sample: Sample, layer: LayerSpec) -> FeatureRecord:
    spec = extractor.spec
    layer.validate_for(spec)
    full = extractor.encode_sample(sample)
    check_finite(full, f"{spec.extractor_id}/{sample.sample_id}")
    payload = full if spec.is_vector else layer.select(full)
    rec = FeatureRecord(sample.sample_id, spec.extractor_id, layer,
                        np.ascontiguousarray(payload, dtype=np.float32))
    rec.validate(spec)
    return rec


# synthetic extractor

SYNTHETIC_DEFAULTS = {"margin": 3.0, "width": 0.5, "output": "sequence"}


def make_synthetic_extractor(seed: int, h: int, num_layers: int, designated_layer: int | None = None,
                             margin: float = 3.0, width: float = 0.5, frame_rate_hz: float = 50.0,
                             output: str = "sequence", extractor_id: str | None = None) -> ExtractorSpec:
    """Spec for a deterministic encoder whose classes separate at one layer.

    Layer ``l`` of a sample of class ``c`` is ``s(l) * mu_c + noise`` with
    ``s(l) = margin * exp(-(l - k*)^2 / (2 width^2))``, so the class signal
    peaks at the designated layer ``k*`` and vanishes a few layers away.
    """
    if h <= 0 or num_layers < 1:
        raise ConfigError("synthetic extractor needs h > 0 and num_layers >= 1")
    if output not in ("sequence", "vector"):
        raise ConfigError(f"unknown synthetic output {output!r}")
    k = num_layers - 2 if designated_layer is None else int(designated_layer)
    k = max(0, k)
    if not 0 <= k < num_layers:
        raise ConfigError(f"designated layer {k} outside [0, {num_layers})")
    options = {"seed": int(seed), "designated_layer": k, "margin": float(margin),
               "width": float(width), "output": output}
    eid = extractor_id or f"synthetic_s{seed}_h{h}_l{num_layers}_k{k}" + ("_vec" if output == "vector" else "")
    version = digest({"options": options, "h": h, "num_layers": num_layers, "frame_rate_hz": frame_rate_hz})
    return ExtractorSpec(eid, "synthetic", h, num_layers, checkpoint_ref=f"synthetic:{seed}",
                         input_rate_hz=16000, version_hash=version, adapter="synthetic",
                         frame_rate_hz=frame_rate_hz, options=options)


class SyntheticExtractor(Extractor):
    def __init__(self, spec: ExtractorSpec):
        super().__init__(spec)
        o = {**SYNTHETIC_DEFAULTS, **dict(spec.options)}
        self.seed = int(o.get("seed", 0))
        self.margin = float(o["margin"])
        self.width = float(o["width"])
        self.designated = int(o.get("designated_layer", max(0, spec.num_layers - 2)))
        self._means: dict[str, np.ndarray] = {}

    def strengths(self) -> np.ndarray:
        layers = np.arange(self.spec.num_layers, dtype=np.float64)
        return self.margin * np.exp(-((layers - self.designated) ** 2) / (2.0 * self.width ** 2))

    def class_mean(self, name: str) -> np.ndarray:
        # keyed by class name only, so corpora sharing a class share its mean
        if name not in self._means:
            rng = np.random.default_rng(stable_int("class-mean", self.seed, name))
            v = rng.standard_normal(self.spec.hidden_dim)
            self._means[name] = v / np.linalg.norm(v)
        return self._means[name]

    def num_frames(self, duration_s: float) -> int:
        n = int(math.floor(duration_s * self.spec.frame_rate_hz + 1e-9))
        if n < 1:
            raise AudioTooShort(f"{duration_s:.4f} s is shorter than one {1 / self.spec.frame_rate_hz:.4f} s frame")
        return n

    def encode_sample(self, sample: Sample) -> np.ndarray:
        if not is_synthetic_ref(sample.audio_ref):
            return super().encode_sample(sample)
        self.calls += 1
        desc = parse_synthetic_ref(sample.audio_ref)
        if desc.latent is not None:
            direction = self.class_mean(desc.latent)
        else:
            direction = 2.0 * (float(desc.target) - 0.5) * self.class_mean("__regression__")
        rng = np.random.default_rng(stable_int("features", self.seed, desc.corpus, desc.sample_id))
        h = self.spec.hidden_dim
        if self.spec.is_vector:
            return (self.margin * direction + rng.standard_normal(h)).astype(np.float32)
        L = self.num_frames(desc.duration_s)
        noise = rng.standard_normal((self.spec.num_layers, L, h))
        out = self.strengths()[:, None, None] * direction[None, None, :] + noise
        return out.astype(np.float32)

    def encode(self, wave: np.ndarray, rate: int) -> np.ndarray:
        """Waveform path: framed random projections, one fixed projection per layer."""
        hop = int(round(rate / self.spec.frame_rate_hz))
        L = len(wave) // hop
        if L < 1:
            raise AudioTooShort(f"{len(wave)} samples is shorter than one {hop}-sample frame")
        frames = np.asarray(wave[: L * hop], dtype=np.float64).reshape(L, hop)
        layers = []
        for layer in range(self.spec.num_layers):
            rng = np.random.default_rng(stable_int("projection", self.seed, layer))
            proj = rng.standard_normal((hop, self.spec.hidden_dim)) / math.sqrt(hop)
            layers.append(np.tanh(4.0 * frames @ proj))
        out = np.stack(layers)
        if self.spec.is_vector:
            return out[-1].mean(axis=0).astype(np.float32)
        return out.astype(np.float32)
