"""Adapter registry and the bundled adapters.

An adapter is a factory ``spec -> Extractor``. Third-party packages can add
adapters without touching this module by exposing a factory under the
``paralbench.adapters`` entry-point group; the entry-point name is the
adapter name that extractor specs refer to.
"""

from __future__ import annotations

import csv
import logging
import math
from importlib.metadata import entry_points
from pathlib import Path
from typing import Callable

import numpy as np

from ..corpus.manifest import Sample
from ..errors import CheckpointUnavailable, ConfigError, UnknownExtractor
from .extractors import Extractor, SyntheticExtractor
from .spec import ExtractorSpec

log = logging.getLogger(__name__)

ENTRY_POINT_GROUP = "paralbench.adapters"

AdapterFactory = Callable[[ExtractorSpec], Extractor]
_ADAPTERS: dict[str, AdapterFactory] = {}
_entry_points_loaded = False


def register_adapter(name: str, factory: AdapterFactory, replace: bool = False) -> None:
    if name in _ADAPTERS and not replace:
        raise ConfigError(f"adapter {name!r} already registered")
    _ADAPTERS[name] = factory


def _load_entry_points() -> None:
    global _entry_points_loaded
    if _entry_points_loaded:
        return
    _entry_points_loaded = True
    from ..probe import backbone  # noqa: F401  registers the synthetic backbone adapter
    for ep in entry_points(group=ENTRY_POINT_GROUP):
        if ep.name in _ADAPTERS and _ADAPTERS[ep.name] is not PluginRequired:
            continue
        try:
            _ADAPTERS[ep.name] = ep.load()
        except Exception as exc:  # a broken plugin must not take the harness down
            log.warning("adapter plugin %s failed to load: %s", ep.name, exc)


def available_adapters() -> list[str]:
    _load_entry_points()
    return sorted(_ADAPTERS)


def get_extractor(spec: ExtractorSpec) -> Extractor:
    _load_entry_points()
    try:
        factory = _ADAPTERS[spec.adapter]
    except KeyError:
        raise UnknownExtractor(f"{spec.extractor_id}: no adapter named {spec.adapter!r} "
                               f"(available: {sorted(_ADAPTERS)})") from None
    return factory(spec)


# Hugging Face transformers


class HuggingFaceExtractor(Extractor):
    """Hidden states of a transformers speech encoder.

    The returned stack holds the outputs of the transformer blocks only
    (the pre-transformer embedding output is dropped). Whisper checkpoints
    expose their encoder states; the decoder has no frame-aligned output.
    """

    def __init__(self, spec: ExtractorSpec):
        super().__init__(spec)
        self._model = None
        self._processor = None
        self._whisper = False

    def _load(self):
        if self._model is not None:
            return
        try:
            import torch  # noqa: F401
            from transformers import AutoConfig, AutoFeatureExtractor, AutoModel
        except ImportError as exc:
            raise CheckpointUnavailable(f"{self.spec.extractor_id}: transformers is not installed ({exc})") from None
        ref = self.spec.checkpoint_ref
        local_only = bool(self.spec.options.get("local_files_only", False))
        try:
            config = AutoConfig.from_pretrained(ref, local_files_only=local_only)
            self._whisper = config.model_type == "whisper"
            model = AutoModel.from_pretrained(ref, local_files_only=local_only)
            self._processor = AutoFeatureExtractor.from_pretrained(ref, local_files_only=local_only)
        except Exception as exc:
            raise CheckpointUnavailable(f"{self.spec.extractor_id}: cannot load {ref!r}: {exc}") from None
        if self._whisper:
            model = model.get_encoder()
        model.eval()
        self._model = model

    def encode(self, wave: np.ndarray, rate: int) -> np.ndarray:
        import torch

        self._load()
        inputs = self._processor(np.asarray(wave, dtype=np.float32), sampling_rate=rate, return_tensors="pt")
        with torch.no_grad():
            if self._whisper:
                out = self._model(inputs["input_features"], output_hidden_states=True)
            else:
                out = self._model(inputs["input_values"], output_hidden_states=True)
        states = out.hidden_states[1:]
        if any(s.dim() != 3 for s in states):
            raise CheckpointUnavailable(f"{self.spec.extractor_id}: hidden states are not (batch, frames, h); "
                                        "register a dedicated adapter for this architecture")
        stack = torch.stack([s[0] for s in states]).float().numpy()
        if self._whisper:
            # the encoder always sees a padded 30 s window; keep the frames covering real audio
            keep = max(1, int(math.ceil(len(wave) / rate * self.spec.frame_rate_hz)))
            stack = stack[:, :keep]
        if stack.shape[0] != self.spec.num_layers or stack.shape[-1] != self.spec.hidden_dim:
            raise ConfigError(f"{self.spec.extractor_id}: checkpoint yields {stack.shape[0]} layers of "
                              f"h={stack.shape[-1]}, spec declares {self.spec.num_layers} x {self.spec.hidden_dim}")
        return stack


# openSMILE functionals from precomputed output files


class OpenSmileCsvExtractor(Extractor):
    """Reads openSMILE functionals (eGeMAPS, ComParE-2016) written as CSV.

    ``options.csv`` points at one file or a directory of files. The first
    column (``name`` or ``file`` in openSMILE's own output) is matched
    against the sample id, then against the audio file stem.
    """

    KEY_COLUMNS = ("name", "file", "filename", "sample_id")

    def __init__(self, spec: ExtractorSpec):
        super().__init__(spec)
        self._table: dict[str, np.ndarray] | None = None

    def _load(self) -> dict[str, np.ndarray]:
        if self._table is not None:
            return self._table
        src = self.spec.options.get("csv") or self.spec.checkpoint_ref
        if not src or not Path(src).exists():
            raise CheckpointUnavailable(f"{self.spec.extractor_id}: openSMILE output {src!r} not found")
        src = Path(src)
        files = [src] if src.is_file() else sorted(src.glob("*.csv"))
        table: dict[str, np.ndarray] = {}
        for f in files:
            with open(f, newline="", encoding="utf-8") as fh:
                head = fh.readline()
                fh.seek(0)
                reader = csv.reader(fh, delimiter=";" if head.count(";") > head.count(",") else ",")
                header = next(reader)
                key_col = next((i for i, c in enumerate(header) if c.strip("'\" ").lower() in self.KEY_COLUMNS), 0)
                skip = {key_col} | {i for i, c in enumerate(header) if c.strip().lower() in ("frametime", "class")}
                for row in reader:
                    if not row:
                        continue
                    key = row[key_col].strip("'\" ")
                    values = np.array([float(v) for i, v in enumerate(row) if i not in skip], dtype=np.float32)
                    if values.shape[0] != self.spec.hidden_dim:
                        raise ConfigError(f"{f}: row {key!r} has {values.shape[0]} features, "
                                          f"expected {self.spec.hidden_dim}")
                    table[key] = values
        self._table = table
        return table

    def encode_sample(self, sample: Sample) -> np.ndarray:
        table = self._load()
        path = sample.audio_ref.split("#", 1)[0]
        for key in (sample.sample_id, Path(path).stem, Path(path).name):
            if key in table:
                self.calls += 1
                return table[key]
        raise CheckpointUnavailable(f"{self.spec.extractor_id}: no openSMILE row for {sample.sample_id}")

    def encode(self, wave, rate):
        raise CheckpointUnavailable(f"{self.spec.extractor_id}: functionals are read from openSMILE output files")


class PluginRequired(Extractor):
    """Placeholder for checkpoints that need a toolkit outside the core (fairseq)."""

    def encode_sample(self, sample):
        raise CheckpointUnavailable(
            f"{self.spec.extractor_id}: adapter {self.spec.adapter!r} is provided by a plugin; register a "
            f"factory under the {ENTRY_POINT_GROUP!r} entry-point group or with register_adapter()")


register_adapter("synthetic", SyntheticExtractor)
register_adapter("huggingface", HuggingFaceExtractor)
register_adapter("opensmile_csv", OpenSmileCsvExtractor)
register_adapter("fairseq", PluginRequired)
register_adapter("clap", PluginRequired)
