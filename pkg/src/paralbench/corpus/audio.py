"""Audio references: RIFF/WAVE and NIST SPHERE decoding, synthetic descriptors.

Only uncompressed containers are decoded here. Corpora distributed in video
containers need their audio tracks exported to WAV first; entries that cannot
be probed are reported as unreadable by the manifest builders.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from urllib.parse import parse_qsl, quote, urlencode, urlsplit

import numpy as np
from scipy.signal import resample_poly

from ..errors import DataError
from ..utils import stable_int

SYNTH_SCHEME = "synth"


@dataclass(frozen=True)
class AudioInfo:
    sample_rate: int
    num_frames: int
    channels: int
    sample_width: int
    encoding: str        # "pcm" or "float"
    data_offset: int
    byte_order: str = "<"

    @property
    def duration_s(self) -> float:
        return self.num_frames / self.sample_rate


class UnreadableAudio(DataError):
    pass


def _probe_riff(fh, path) -> AudioInfo:
    head = fh.read(12)
    if len(head) < 12 or head[:4] not in (b"RIFF", b"RIFX") or head[8:12] != b"WAVE":
        raise UnreadableAudio(f"{path}: not a RIFF/WAVE file")
    order = "<" if head[:4] == b"RIFF" else ">"
    fmt = None
    while True:
        chunk = fh.read(8)
        if len(chunk) < 8:
            raise UnreadableAudio(f"{path}: no data chunk")
        cid, size = chunk[:4], struct.unpack(order + "I", chunk[4:])[0]
        if cid == b"fmt ":
            body = fh.read(size)
            if len(body) < 16:
                raise UnreadableAudio(f"{path}: truncated fmt chunk")
            tag, channels, rate, _, _, bits = struct.unpack(order + "HHIIHH", body[:16])
            if tag == 0xFFFE and len(body) >= 26:
                tag = struct.unpack(order + "H", body[24:26])[0]
            if tag not in (1, 3):
                raise UnreadableAudio(f"{path}: unsupported WAVE format tag {tag}")
            fmt = (tag, channels, rate, bits)
            if size % 2:
                fh.read(1)
        elif cid == b"data":
            if fmt is None:
                raise UnreadableAudio(f"{path}: data chunk before fmt chunk")
            tag, channels, rate, bits = fmt
            width = bits // 8
            if channels < 1 or rate < 1 or width < 1:
                raise UnreadableAudio(f"{path}: invalid fmt values")
            return AudioInfo(rate, size // (width * channels), channels, width,
                             "float" if tag == 3 else "pcm", fh.tell(), order)
        else:
            fh.seek(size + (size % 2), 1)


def _probe_sphere(fh, path) -> AudioInfo:
    fh.seek(0)
    first = fh.read(16)
    header_size = int(first[8:15].strip())
    text = (first + fh.read(header_size - 16)).decode("latin-1")
    fields = {}
    for line in text.splitlines()[2:]:
        if line.strip() == "end_head":
            break
        parts = line.split(None, 2)
        if len(parts) == 3:
            fields[parts[0]] = parts[2].strip()
    coding = fields.get("sample_coding", "pcm")
    if not coding.startswith("pcm") or "shorten" in coding:
        raise UnreadableAudio(f"{path}: unsupported SPHERE coding {coding!r}")
    try:
        rate = int(fields["sample_rate"])
        count = int(fields["sample_count"])
    except KeyError as exc:
        raise UnreadableAudio(f"{path}: SPHERE header lacks {exc}") from None
    order = ">" if fields.get("sample_byte_format", "01") == "10" else "<"
    return AudioInfo(rate, count, int(fields.get("channel_count", 1)),
                     int(fields.get("sample_n_bytes", 2)), "pcm", header_size, order)


def probe(path) -> AudioInfo:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            magic = fh.read(8)
            fh.seek(0)
            if magic[:7] == b"NIST_1A":
                info = _probe_sphere(fh, path)
            else:
                info = _probe_riff(fh, path)
    except OSError as exc:
        raise UnreadableAudio(f"{path}: {exc}") from None
    except (ValueError, struct.error) as exc:
        raise UnreadableAudio(f"{path}: malformed header ({exc})") from None
    if info.num_frames <= 0:
        raise UnreadableAudio(f"{path}: no audio frames")
    return info


def _decode(raw: bytes, info: AudioInfo) -> np.ndarray:
    w, order = info.sample_width, info.byte_order
    if info.encoding == "float":
        data = np.frombuffer(raw, dtype=np.dtype(f"{order}f{w}")).astype(np.float64)
    elif w == 1:
        data = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif w == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        if order == ">":
            b = b[:, ::-1]
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        data = v / float(1 << 23)
    else:
        data = np.frombuffer(raw, dtype=np.dtype(f"{order}i{w}")).astype(np.float64) / float(1 << (8 * w - 1))
    n = len(data) // info.channels
    return data[: n * info.channels].reshape(n, info.channels).mean(axis=1)


def read_audio(path, start_s: float | None = None, end_s: float | None = None) -> tuple[np.ndarray, int]:
    """Decode a file to mono float32 in [-1, 1]."""
    info = probe(path)
    frame_bytes = info.sample_width * info.channels
    first = 0 if start_s is None else max(0, int(round(start_s * info.sample_rate)))
    last = info.num_frames if end_s is None else min(info.num_frames, int(round(end_s * info.sample_rate)))
    if last <= first:
        raise UnreadableAudio(f"{path}: empty segment [{start_s}, {end_s}]")
    with open(path, "rb") as fh:
        fh.seek(info.data_offset + first * frame_bytes)
        raw = fh.read((last - first) * frame_bytes)
    return _decode(raw, info).astype(np.float32), info.sample_rate


def resample(wave: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    if rate == target_rate:
        return wave
    ratio = Fraction(target_rate, rate)
    return resample_poly(wave, ratio.numerator, ratio.denominator).astype(np.float32)


def write_wav(path, wave: np.ndarray, rate: int) -> None:
    """16-bit PCM mono writer (fixtures and exports)."""
    pcm = np.clip(np.asarray(wave, dtype=np.float64), -1.0, 1.0)
    data = (pcm * 32767.0).round().astype("<i2").tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(data))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header + data)


# synthetic descriptors: synth://<corpus>/<sample_id>?cls=...&dur=...&y=...

@dataclass(frozen=True)
class SyntheticDescriptor:
    corpus: str
    sample_id: str
    duration_s: float
    latent: str | None = None
    target: float | None = None

    def to_ref(self) -> str:
        q = {"dur": f"{self.duration_s:.6f}"}
        if self.latent is not None:
            q["cls"] = self.latent
        if self.target is not None:
            q["y"] = repr(float(self.target))
        return f"{SYNTH_SCHEME}://{quote(self.corpus)}/{quote(self.sample_id)}?{urlencode(sorted(q.items()))}"


def is_synthetic_ref(ref: str) -> bool:
    return ref.startswith(SYNTH_SCHEME + "://")


def parse_synthetic_ref(ref: str) -> SyntheticDescriptor:
    parts = urlsplit(ref)
    if parts.scheme != SYNTH_SCHEME:
        raise DataError(f"not a synthetic descriptor: {ref}")
    q = dict(parse_qsl(parts.query))
    return SyntheticDescriptor(
        corpus=parts.netloc,
        sample_id=parts.path.lstrip("/"),
        duration_s=float(q["dur"]),
        latent=q.get("cls"),
        target=float(q["y"]) if "y" in q else None,
    )


def render_synthetic(desc: SyntheticDescriptor, rate: int) -> np.ndarray:
    """Class-conditional tone plus noise, so waveform encoders see the latent too."""
    n = max(1, int(round(desc.duration_s * rate)))
    rng = np.random.default_rng(stable_int("wave", desc.corpus, desc.sample_id))
    t = np.arange(n) / rate
    if desc.latent is not None:
        f0 = 150.0 + 40.0 * (stable_int("f0", desc.latent) % 12)
        amp = 0.5
    else:
        f0 = 220.0
        amp = 0.1 + 0.8 * (desc.target or 0.0)
    wave = amp * np.sin(2 * math.pi * f0 * t) + 0.05 * rng.standard_normal(n)
    return wave.astype(np.float32)


def split_fragment(ref: str) -> tuple[str, float | None, float | None]:
    """``path#t=start,end`` segment references (used for clips inside longer files)."""
    if "#t=" not in ref:
        return ref, None, None
    path, frag = ref.split("#t=", 1)
    start, end = frag.split(",")
    return path, float(start), float(end)


def load_audio(ref: str, target_rate: int | None = None) -> tuple[np.ndarray, int]:
    if is_synthetic_ref(ref):
        rate = target_rate or 16000
        return render_synthetic(parse_synthetic_ref(ref), rate), rate
    path, start, end = split_fragment(ref)
    wave, rate = read_audio(path, start, end)
    if target_rate is not None and target_rate != rate:
        wave, rate = resample(wave, rate, target_rate), target_rate
    return wave, rate
