"""Readers for the native on-disk layouts of the benchmark corpora.

Each reader returns samples with their official split (``unassigned`` where
the corpus has none), plus every entry it could not use. Nothing is dropped
silently: unusable entries are returned as ``ExcludedEntry`` records and end
up in the manifest header.

Expected layouts (paths relative to the corpus root)::

    meld         {train,dev,test}_sent_emo.csv
                 train_splits/ dev_splits_complete/ output_repeated_splits_test/
                     dia{D}_utt{U}.{wav,mp4}
    msp_podcast  Labels/labels_consensus.csv, Audios/<FileName>
    cmu_mosi     label.csv (video_id, clip_id, label, mode), wav/<video_id>/<clip_id>.wav
    iemocap      Session{1..5}/dialog/EmoEvaluation/*.txt
                 Session{1..5}/sentences/wav/<dialog>/<utt>.wav
    mustard      sarcasm_data.json, utterances_final/<id>.wav
    flusense     flusense_data/<clip>.wav, flusense_data_label/<clip>.TextGrid
    sep28k       SEP-28k_labels.csv, splits/{train,valid,test}.txt,
                 clips/<Show>/<EpId>/<Show>_<EpId>_<ClipId>.wav
    daic_woz     train_split_Depression_AVEC2017.csv, dev_split_Depression_AVEC2017.csv,
                 full_test_split.csv, <pid>_P/<pid>_AUDIO.wav
    vctk         speaker-info.txt, wav48/<speaker>/<utt>.wav
    timit        {TRAIN,TEST}/DR{1..8}/<speaker>/<utt>.WAV  (case-insensitive)
"""

from __future__ import annotations

import csv
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from ..errors import DataError, MissingPartitionFiles
from .audio import UnreadableAudio, probe
from .manifest import UNASSIGNED, ExcludedEntry, Sample

PROBE_WORKERS = 8


@dataclass
class ReaderResult:
    samples: list[Sample] = field(default_factory=list)
    excluded: list[ExcludedEntry] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


@dataclass
class _Entry:
    sample_id: str
    path: Path
    split: str
    labels: dict
    group_keys: dict
    duration_s: float | None = None   # None -> probe the file header
    fragment: str = ""


def _require(root: Path, names: Iterable[str]) -> None:
    missing = [n for n in names if not (root / n).exists()]
    if missing:
        raise MissingPartitionFiles(f"{root}: missing partition/metadata files {missing}")


def _root(raw_root) -> Path:
    if raw_root is None:
        raise DataError("a raw corpus root directory is required")
    root = Path(raw_root)
    if not root.is_dir():
        raise DataError(f"raw root {root} is not a directory")
    return root


def _read_csv(path: Path, delimiter: str = ",") -> list[dict]:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        return list(csv.DictReader(fh, delimiter=delimiter))


def _materialize(entries: list[_Entry], result: ReaderResult) -> ReaderResult:
    """Check audio presence, probe durations in parallel, build samples."""

    def check(entry: _Entry):
        try:
            if entry.duration_s is None:
                info = probe(entry.path)
                return info.duration_s, info.sample_rate, None
            st = entry.path.stat()
            if st.st_size == 0:
                return None, None, "empty audio file"
            return entry.duration_s, 16000, None
        except FileNotFoundError:
            return None, None, "missing audio file"
        except UnreadableAudio as exc:
            return None, None, f"unreadable audio: {exc}"

    with ThreadPoolExecutor(max_workers=PROBE_WORKERS) as pool:
        checked = list(pool.map(check, entries))
    for entry, (dur, rate, problem) in zip(entries, checked):
        ref = str(entry.path) + entry.fragment
        if problem is None and not (dur and dur > 0):
            problem = f"non-positive duration {dur}"
        if problem is not None:
            result.excluded.append(ExcludedEntry(entry.sample_id, ref, problem))
            continue
        result.samples.append(Sample(entry.sample_id, ref, float(dur), int(rate),
                                     entry.labels, entry.split, entry.group_keys))
    return result


def _timestamp(s: str) -> float:
    h, m, rest = s.strip().split(":")
    sec, _, ms = rest.partition(",")
    return int(h) * 3600 + int(m) * 60 + int(sec) + (int(ms) / 1000.0 if ms else 0.0)


def read_meld(raw_root) -> ReaderResult:
    root = _root(raw_root)
    parts = {
        "train": ("train_sent_emo.csv", ("train_splits", "train")),
        "validation": ("dev_sent_emo.csv", ("dev_splits_complete", "dev_splits", "dev")),
        "test": ("test_sent_emo.csv", ("output_repeated_splits_test", "test_splits", "test")),
    }
    _require(root, [p[0] for p in parts.values()])
    entries, result = [], ReaderResult()
    for split, (csv_name, dirs) in parts.items():
        audio_dir = next((root / d for d in dirs if (root / d).is_dir()), root / dirs[0])
        for row in _read_csv(root / csv_name):
            d, u = row["Dialogue_ID"].strip(), row["Utterance_ID"].strip()
            stem = f"dia{d}_utt{u}"
            path = audio_dir / f"{stem}.wav"
            if not path.exists():
                path = audio_dir / f"{stem}.mp4"
            try:
                dur = _timestamp(row["EndTime"]) - _timestamp(row["StartTime"])
            except (KeyError, ValueError):
                dur = None
            if dur is not None and dur <= 0 and path.suffix == ".wav":
                dur = None
            entries.append(_Entry(
                f"{split}_{stem}", path, split,
                {"meld_emotion": row["Emotion"].strip(), "meld_sentiment": row["Sentiment"].strip()},
                {"speaker": row.get("Speaker", "").strip(), "dialogue": f"{split}_{d}"},
                duration_s=dur if dur is not None else (None if path.suffix == ".wav" else -1.0),
            ))
    return _materialize(entries, result)


def read_msp_podcast(raw_root) -> ReaderResult:
    root = _root(raw_root)
    labels = root / "Labels" / "labels_consensus.csv"
    _require(root, ["Labels/labels_consensus.csv"])
    split_map = {"train": "train", "development": "validation", "test1": "test"}
    entries, result = [], ReaderResult()
    for row in _read_csv(labels):
        name = row["FileName"].strip()
        split = split_map.get(row["Split_Set"].strip().lower(), UNASSIGNED)
        podcast = name.split("_")[1] if name.count("_") >= 2 else ""
        entries.append(_Entry(
            Path(name).stem, root / "Audios" / name, split,
            {"msp_emotion": row["EmoClass"].strip(), "msp_gender": row["Gender"].strip()},
            {"speaker": row.get("SpkrID", "").strip(), "podcast": podcast},
        ))
    result.notes.append("Test2 partition left unassigned; Test1 is the test split")
    return _materialize(entries, result)


def read_cmu_mosi(raw_root) -> ReaderResult:
    root = _root(raw_root)
    _require(root, ["label.csv"])
    split_map = {"train": "train", "valid": "validation", "test": "test"}
    entries = []
    for row in _read_csv(root / "label.csv"):
        vid, clip = row["video_id"].strip(), row["clip_id"].strip()
        score = float(row["label"])
        entries.append(_Entry(
            f"{vid}_{clip}", root / "wav" / vid / f"{clip}.wav",
            split_map.get(row["mode"].strip().lower(), UNASSIGNED),
            {"mosi_sentiment": "negative" if score < 0 else "positive"},
            {"video": vid},
        ))
    return _materialize(entries, ReaderResult())


_IEMOCAP_LINE = re.compile(
    r"^\[(?P<start>[\d.]+) - (?P<end>[\d.]+)\]\t(?P<utt>\S+)\t(?P<emo>\S+)\t"
    r"\[(?P<v>[\d.]+), (?P<a>[\d.]+), (?P<d>[\d.]+)\]")


def read_iemocap(raw_root) -> ReaderResult:
    root = _root(raw_root)
    sessions = sorted(p for p in root.glob("Session[1-5]") if p.is_dir())
    if not sessions:
        raise MissingPartitionFiles(f"{root}: no Session1..Session5 directories")
    entries = []
    for sess in sessions:
        sess_no = sess.name[-1]
        for txt in sorted((sess / "dialog" / "EmoEvaluation").glob("*.txt")):
            dialog = txt.stem
            for line in txt.read_text(encoding="utf-8", errors="replace").splitlines():
                m = _IEMOCAP_LINE.match(line)
                if not m:
                    continue
                utt = m["utt"]
                entries.append(_Entry(
                    utt, sess / "sentences" / "wav" / dialog / f"{utt}.wav", UNASSIGNED,
                    {"iemocap_emotion": m["emo"], "iemocap_valence": float(m["v"]),
                     "iemocap_arousal": float(m["a"]), "iemocap_dominance": float(m["d"])},
                    {"session": sess_no, "speaker": f"Ses0{sess_no}{utt.rsplit('_', 1)[-1][0]}"},
                    duration_s=float(m["end"]) - float(m["start"]),
                ))
    return _materialize(entries, ReaderResult())


def read_mustard(raw_root) -> ReaderResult:
    root = _root(raw_root)
    _require(root, ["sarcasm_data.json"])
    data = json.loads((root / "sarcasm_data.json").read_text(encoding="utf-8"))
    entries = []
    for key in sorted(data):
        rec = data[key]
        entries.append(_Entry(
            key, root / "utterances_final" / f"{key}.wav", UNASSIGNED,
            {"mustard_sarcasm": "true" if rec["sarcasm"] else "false"},
            {"show": str(rec["show"]).upper(), "speaker": str(rec.get("speaker", ""))},
        ))
    return _materialize(entries, ReaderResult())


_TG_INTERVAL = re.compile(
    r"intervals\s*\[(\d+)\]:\s*xmin\s*=\s*([\d.]+)\s*xmax\s*=\s*([\d.]+)\s*text\s*=\s*\"([^\"]*)\"")


def parse_textgrid_intervals(text: str) -> list[tuple[int, float, float, str]]:
    return [(int(n), float(a), float(b), t) for n, a, b, t in _TG_INTERVAL.findall(text)]


def read_flusense(raw_root) -> ReaderResult:
    root = _root(raw_root)
    label_dir = root / "flusense_data_label"
    _require(root, ["flusense_data_label", "flusense_data"])
    entries = []
    for tg in sorted(label_dir.glob("*.TextGrid")):
        clip = tg.stem
        wav = root / "flusense_data" / f"{clip}.wav"
        for n, start, end, label in parse_textgrid_intervals(tg.read_text(encoding="utf-8", errors="replace")):
            if not label.strip():
                continue
            entries.append(_Entry(
                f"{clip}_{n:03d}", wav, UNASSIGNED,
                {"flusense_influenza": label.strip()}, {"clip": clip},
                duration_s=end - start, fragment=f"#t={start:.3f},{end:.3f}",
            ))
    return _materialize(entries, ReaderResult())


SEP_DYSFLUENCIES = ("Prolongation", "Block", "SoundRep", "WordRep", "Interjection")


def read_sep28k(raw_root) -> ReaderResult:
    root = _root(raw_root)
    _require(root, ["SEP-28k_labels.csv", "splits/train.txt", "splits/valid.txt", "splits/test.txt"])
    assignment = {}
    for split, fname in (("train", "train.txt"), ("validation", "valid.txt"), ("test", "test.txt")):
        for line in (root / "splits" / fname).read_text(encoding="utf-8").split():
            assignment[line.strip()] = split
    entries = []
    for row in _read_csv(root / "SEP-28k_labels.csv"):
        show, ep, clip = row["Show"].strip(), row["EpId"].strip(), row["ClipId"].strip()
        name = f"{show}_{ep}_{clip}"
        # majority of the three annotators flags at least one dysfluency type
        stutter = any(int(row[k]) >= 2 for k in SEP_DYSFLUENCIES)
        entries.append(_Entry(
            name, root / "clips" / show / ep / f"{name}.wav", assignment.get(name, UNASSIGNED),
            {"sep28k_stutter": "stutter" if stutter else "fluent"},
            {"show": show, "episode": f"{show}_{ep}"},
            duration_s=(int(row["Stop"]) - int(row["Start"])) / 16000.0,
        ))
    return _materialize(entries, ReaderResult())


def read_daic_woz(raw_root) -> ReaderResult:
    root = _root(raw_root)
    files = {"train": "train_split_Depression_AVEC2017.csv",
             "validation": "dev_split_Depression_AVEC2017.csv",
             "test": "full_test_split.csv"}
    _require(root, files.values())
    entries = []
    for split, fname in files.items():
        for row in _read_csv(root / fname):
            pid = row["Participant_ID"].strip()
            binary = row.get("PHQ8_Binary", row.get("PHQ_Binary", "")).strip()
            entries.append(_Entry(
                pid, root / f"{pid}_P" / f"{pid}_AUDIO.wav", split,
                {"daicwoz_depression": binary}, {"speaker": pid},
            ))
    return _materialize(entries, ReaderResult())


def read_vctk(raw_root) -> ReaderResult:
    root = _root(raw_root)
    _require(root, ["speaker-info.txt"])
    wav_dir = next((root / d for d in ("wav48", "wav48_silence_trimmed", "wav") if (root / d).is_dir()), None)
    if wav_dir is None:
        raise MissingPartitionFiles(f"{root}: no wav48/ directory")
    speakers = {}
    lines = (root / "speaker-info.txt").read_text(encoding="utf-8").splitlines()
    for line in lines[1:]:
        parts = line.split()
        if len(parts) < 4:
            continue
        sid = parts[0] if parts[0].startswith("p") else f"p{parts[0]}"
        speakers[sid] = {"vctk_age": float(parts[1]), "vctk_accent": parts[3]}
    entries, result = [], ReaderResult()
    for spk_dir in sorted(p for p in wav_dir.iterdir() if p.is_dir()):
        for wav in sorted(spk_dir.glob("*.wav")):
            if spk_dir.name not in speakers:
                result.excluded.append(ExcludedEntry(wav.stem, str(wav), "speaker missing from speaker-info.txt"))
                continue
            entries.append(_Entry(wav.stem, wav, UNASSIGNED, dict(speakers[spk_dir.name]),
                                  {"speaker": spk_dir.name}))
    return _materialize(entries, result)


def _ci_children(path: Path, pattern: str) -> list[Path]:
    rx = re.compile(pattern, re.IGNORECASE)
    return sorted(p for p in path.iterdir() if rx.fullmatch(p.name))


def read_timit(raw_root) -> ReaderResult:
    root = _root(raw_root)
    split_dirs = {p.name.lower(): p for p in root.iterdir() if p.is_dir()}
    if "train" not in split_dirs or "test" not in split_dirs:
        raise MissingPartitionFiles(f"{root}: expected TRAIN/ and TEST/ directories")
    entries = []
    for split in ("train", "test"):
        for dr in _ci_children(split_dirs[split], r"dr[1-8]"):
            for spk in sorted(p for p in dr.iterdir() if p.is_dir()):
                chosen: dict[str, Path] = {}
                for wav in _ci_children(spk, r"[^.]+\.wav(\.wav)?"):
                    stem = wav.name.split(".")[0].lower()
                    # converted copies (*.WAV.wav) win over raw SPHERE files
                    if stem not in chosen or wav.name.lower().endswith(".wav.wav"):
                        chosen[stem] = wav
                for stem, wav in sorted(chosen.items()):
                    entries.append(_Entry(
                        f"{split}/{dr.name.lower()}/{spk.name.lower()}/{stem}", wav, split,
                        {"timit_dialect": dr.name.lower()},
                        {"speaker": spk.name.lower(), "region": dr.name.lower()},
                    ))
    return _materialize(entries, ReaderResult())


READERS: dict[str, Callable[[object], ReaderResult]] = {
    "meld": read_meld,
    "msp_podcast": read_msp_podcast,
    "cmu_mosi": read_cmu_mosi,
    "iemocap": read_iemocap,
    "mustard": read_mustard,
    "flusense": read_flusense,
    "sep28k": read_sep28k,
    "daic_woz": read_daic_woz,
    "vctk": read_vctk,
    "timit": read_timit,
}
