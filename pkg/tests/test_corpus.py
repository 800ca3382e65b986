import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import native_fixtures as nf
from paralbench.corpus import Manifest, SplitPolicy, build_manifest, verify_manifest
from paralbench.corpus.audio import (
    SyntheticDescriptor,
    UnreadableAudio,
    load_audio,
    parse_synthetic_ref,
    probe,
    read_audio,
    resample,
    split_fragment,
    write_wav,
)
from paralbench.corpus.manifest import (
    Sample,
    filter_min_class_count,
    split_by_group,
    split_random,
)
from paralbench.corpus.readers import READERS, parse_textgrid_intervals
from paralbench.errors import AlreadyAssigned, DataError, ManifestError, MissingPartitionFiles, UncoveredGroup


def _manifest(n, groups=4):
    samples = tuple(Sample(f"s{i:04d}", f"/x/{i}.wav", 1.0, labels={"t": "a" if i % 2 else "b"},
                           group_keys={"speaker": f"spk{i % groups}"}) for i in range(n))
    return Manifest("toy", samples)


class TestSplitPolicies:
    def test_random_split_is_deterministic(self):
        a = split_random(_manifest(101), 0.8, seed=1)
        b = split_random(_manifest(101), 0.8, seed=1)
        assert a.dumps() == b.dumps()
        assert a.split_counts() == (80, 0, 21)

    def test_random_split_depends_on_seed(self):
        a = split_random(_manifest(200), 0.5, seed=1)
        b = split_random(_manifest(200), 0.5, seed=2)
        assert {s.sample_id for s in a.split("train")} != {s.sample_id for s in b.split("train")}

    def test_random_split_ignores_input_order(self):
        m = _manifest(60)
        shuffled = m.replace(samples=tuple(reversed(m.samples)))
        a = {s.sample_id: s.split for s in split_random(m, 0.7, 3).samples}
        b = {s.sample_id: s.split for s in split_random(shuffled, 0.7, 3).samples}
        assert a == b

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 300), st.floats(0.05, 0.95), st.integers(0, 10**6))
    def test_random_split_partition(self, n, frac, seed):
        m = split_random(_manifest(n), frac, seed)
        tr, va, te = m.split_counts()
        assert tr + te == n and va == 0
        assert abs(tr - n * frac) <= 1

    def test_already_assigned(self):
        m = split_random(_manifest(10), 0.5, 0)
        with pytest.raises(AlreadyAssigned):
            split_random(m, 0.5, 0)

    def test_group_split_keeps_groups_disjoint(self):
        m = split_by_group(_manifest(40), "speaker", {"spk0": "test"}, default="train")
        train_spk = {s.group_keys["speaker"] for s in m.split("train")}
        test_spk = {s.group_keys["speaker"] for s in m.split("test")}
        assert not train_spk & test_spk
        assert m.split_counts() == (30, 0, 10)

    def test_group_split_requires_coverage(self):
        with pytest.raises(UncoveredGroup):
            split_by_group(_manifest(8), "speaker", {"spk0": "test"})
        with pytest.raises(UncoveredGroup):
            split_by_group(_manifest(8), "session", {"1": "test"})

    def test_random_policy_needs_seed(self):
        with pytest.raises(ManifestError):
            SplitPolicy("r", "random_ratio", {"train_fraction": 0.8})


class TestMinClassCount:
    def test_flusense_filter(self, registry):
        task = registry.get("flusense_influenza")
        samples = [Sample(f"x{i}", "/a.wav", 1.0, labels={task.task_id: "cough"}) for i in range(120)]
        samples += [Sample(f"y{i}", "/a.wav", 1.0, labels={task.task_id: "burp"}) for i in range(7)]
        samples += [Sample(f"z{i}", "/a.wav", 1.0, labels={task.task_id: "sneeze"}) for i in range(100)]
        m = filter_min_class_count(Manifest("flusense", tuple(samples)), task, 100)
        assert len(m) == 220
        assert m.task_label_space(task).classes == ("cough", "sneeze")
        assert any("burp" in n for n in m.notes)


    def test_synthetic_class_below_minimum(self, registry):
        task = registry.get("synthetic_imbalanced_class")
        m = build_manifest("synthetic_imbalanced", registry=registry)
        assert m.task_label_space(task).classes == ("class_a", "class_b", "class_c")
        kept = filter_min_class_count(m, task, 5)
        assert kept.task_label_space(task).classes == ("class_a", "class_b")
        assert len(kept) == len(m) - 2


class TestManifestIO:
    def test_round_trip(self, tmp_path, registry):
        m = build_manifest("synthetic_small", registry=registry)
        path = tmp_path / "m.jsonl"
        m.save(path)
        again = Manifest.load(path)
        assert again.dumps() == m.dumps()
        assert again.split_counts() == m.split_counts() == (120, 30, 60)

    def test_header_records_policy_and_seed(self, registry):
        m = build_manifest("synthetic3", policy=SplitPolicy.random(0.8, 7), registry=registry)
        header = m.header()
        assert header["policy"]["kind"] == "random_ratio"
        assert header["seed"] == 7


class TestVerification:
    def test_deltas(self, registry):
        m = build_manifest("synthetic3", registry=registry)
        ok = verify_manifest(m, (600, 0, 150))
        assert ok.passed and ok.deltas == {"train": 0, "validation": 0, "test": 0}
        bad = verify_manifest(m, (601, 0, 150))
        assert not bad.passed and bad.deltas["train"] == -1
        assert "FAIL" in bad.render()


class TestReaders:
    def test_meld_excludes_missing_files(self, tmp_path, registry):
        root = nf.make_meld(tmp_path / "meld", rows=(30, 10, 12), missing=(2, 1, 0))
        m = build_manifest("meld", root, registry=registry)
        assert m.split_counts() == (28, 9, 12)
        assert len(m.excluded) == 3
        assert all(e.reason == "missing audio file" for e in m.excluded)

    def test_unreadable_audio_is_excluded(self, tmp_path):
        root = nf.make_timit(tmp_path / "timit", train_speakers=2, test_speakers=1, per_speaker=2)
        victim = next(root.glob("TRAIN/*/*/SA1.WAV"))
        victim.unlink()
        victim.write_bytes(b"garbage bytes, not audio")
        res = READERS["timit"](root)
        assert len(res.samples) == 5
        assert len(res.excluded) == 1 and "unreadable" in res.excluded[0].reason

    def test_timit_labels_and_groups(self, tmp_path, registry):
        root = nf.make_timit(tmp_path / "timit", train_speakers=8, test_speakers=8, per_speaker=2)
        m = build_manifest("timit", root, registry=registry)
        task = registry.get("timit_dialect")
        assert m.task_counts(task) == (16, 0, 16)
        names = {m.task_label_space(task).lookup(s.labels[task.task_id]) for s in m.samples}
        assert len(names) == 8

    def test_iemocap_session_policy(self, tmp_path, registry):
        root = nf.make_iemocap(tmp_path / "iemocap", per_session=(10, 10, 10, 10, 12),
                               four_class=(5, 5, 5, 5, 6))
        m = build_manifest("iemocap", root, registry=registry)
        assert m.split_counts() == (40, 0, 12)
        assert {s.group_keys["session"] for s in m.split("test")} == {"5"}
        assert m.task_counts(registry.get("iemocap_emotion")) == (20, 0, 6)
        arousal = registry.get("iemocap_arousal")
        values = [arousal.target.normalize(s.labels["iemocap_arousal"]) for s in m.samples]
        assert min(values) >= 0.0 and max(values) <= 1.0

    def test_mustard_friends_is_test(self, tmp_path, registry):
        root = nf.make_mustard(tmp_path / "mustard", friends=6, other=9)
        m = build_manifest("mustard", root, registry=registry)
        assert m.split_counts() == (9, 0, 6)
        assert all(s.group_keys["show"] == "FRIENDS" for s in m.split("test"))

    def test_missing_partition_files(self, tmp_path):
        (tmp_path / "empty").mkdir()
        for name in ("meld", "sep28k", "daic_woz", "iemocap", "timit"):
            with pytest.raises(MissingPartitionFiles):
                READERS[name](tmp_path / "empty")
        with pytest.raises(DataError):
            READERS["meld"](tmp_path / "nope")

    def test_textgrid_parser(self):
        text = nf._textgrid([(0.0, 0.4, "cough"), (0.4, 0.5, "")])
        assert parse_textgrid_intervals(text) == [(1, 0.0, 0.4, "cough"), (2, 0.4, 0.5, "")]


class TestAudio:
    def test_wav_round_trip(self, tmp_path):
        wave = np.sin(np.linspace(0, 20, 1600)) * 0.5
        write_wav(tmp_path / "a.wav", wave, 16000)
        info = probe(tmp_path / "a.wav")
        assert (info.sample_rate, info.num_frames) == (16000, 1600)
        back, rate = read_audio(tmp_path / "a.wav")
        np.testing.assert_allclose(back, wave, atol=1 / 32767)

    def test_fragment(self, tmp_path):
        write_wav(tmp_path / "a.wav", np.zeros(16000), 16000)
        assert split_fragment(f"{tmp_path}/a.wav#t=0.250,0.500") == (f"{tmp_path}/a.wav", 0.25, 0.5)
        wave, rate = load_audio(f"{tmp_path}/a.wav#t=0.250,0.500")
        assert len(wave) == 4000

    def test_resample_length(self):
        wave = np.random.default_rng(0).normal(size=48000)
        assert len(resample(wave, 48000, 16000)) == 16000

    def test_probe_rejects_garbage(self, tmp_path):
        (tmp_path / "x.wav").write_bytes(b"RIFF1234")
        with pytest.raises(UnreadableAudio):
            probe(tmp_path / "x.wav")

    def test_synthetic_ref(self):
        desc = SyntheticDescriptor("c", "c_00001", 0.15, latent="class_a")
        again = parse_synthetic_ref(desc.to_ref())
        assert again == desc
        wave, rate = load_audio(desc.to_ref(), 16000)
        assert len(wave) == int(round(0.15 * 16000))
