"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also repeated in the terminal summary under
"acceptance criteria". Local copies of TIMIT and MELD are picked up from
``PARALBENCH_TIMIT_ROOT`` and ``PARALBENCH_MELD_ROOT`` when set.
"""

import contextlib
import itertools
import os
import re
import time
from fractions import Fraction

import numpy as np
import pytest
import torch

import native_fixtures
from conftest import ACCEPTANCE_LINES
from paralbench.cli import main as cli_main
from paralbench.corpus import build_manifest, verify_manifest
from paralbench.features import FeatureCache, make_synthetic_extractor
from paralbench.metrics import confusion, ua, wa, wf1
from paralbench.probe import LoraConfig, SyntheticTransformerBackbone, apply_lora, loss_ce, loss_mae
from paralbench.protocols import (
    Harness,
    metrics_match,
    replay,
    run_cross_corpus,
    run_fusion_compare,
    run_layer_sweep,
    run_lora_compare,
    run_within_corpus,
)
from paralbench.store import ResultsStore, RunSpec

SMALL_PROBE = {"d": 32, "attention_heads": 4}


@contextlib.contextmanager
def criterion(n: int, title: str):
    """Records PASS when the block finishes cleanly, FAIL with the reason otherwise."""
    notes: list[str] = []
    try:
        yield notes
    except BaseException as exc:
        reason = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        line = f"criterion {n:2d} FAIL  {title}: {reason}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    line = f"criterion {n:2d} PASS  {title}" + (f" ({'; '.join(notes)})" if notes else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def _harness(root, registry, **kw):
    return Harness(registry=registry, cache=FeatureCache(root / "cache"), store=ResultsStore(root / "results"),
                   checkpoint_dir=root / "checkpoints", config_hash="acceptance", **kw)


# metric oracle, written from the per-class definitions without a confusion matrix


def oracle_metrics(y_true, y_pred, C):
    n = len(y_true)
    wa_num, recalls, wf1_num = 0.0, [], 0.0
    for c in range(C):
        idx = [i for i in range(n) if y_true[i] == c]
        if not idx:
            continue
        hits = sum(1 for i in idx if y_pred[i] == c)
        predicted = sum(1 for p in y_pred if p == c)
        recall = hits / len(idx)
        precision = hits / predicted if predicted else 0.0
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        wa_num += len(idx) * recall
        recalls.append(recall)
        wf1_num += len(idx) * f1
    return wa_num / n, sum(recalls) / len(recalls), wf1_num / n


def _random_instances(count=1000, seed=2024):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        C = int(rng.integers(1, 9))
        N = int(rng.integers(1, 201))
        yield C, rng.integers(0, C, N).tolist(), rng.integers(0, C, N).tolist()


def test_criterion_01_metric_oracle():
    with criterion(1, "metric oracle equivalence") as notes:
        start = time.perf_counter()
        worst = 0.0
        for C, y, p in _random_instances():
            got = np.array([f(confusion(y, p, C)) for f in (wa, ua, wf1)])
            worst = max(worst, float(np.max(np.abs(got - oracle_metrics(y, p, C)))))
        exhaustive = 0
        for C in (1, 2, 3):
            for N in range(1, 5):
                for y in itertools.product(range(C), repeat=N):
                    for p in itertools.product(range(C), repeat=N):
                        cm = confusion(y, p, C)
                        np.testing.assert_allclose([wa(cm), ua(cm), wf1(cm)], oracle_metrics(y, p, C),
                                                   atol=1e-9, rtol=0)
                        exhaustive += 1
        elapsed = time.perf_counter() - start
        notes.append(f"max |diff| {worst:.1e} over 1000 random, {exhaustive} exhaustive, {elapsed:.1f} s")
        assert worst <= 1e-9, f"max deviation {worst}"
        assert elapsed < 10.0, f"took {elapsed:.1f} s"


def test_criterion_02_wa_trace_identity():
    with criterion(2, "WA equals trace/N exactly") as notes:
        checked = 0
        for C, y, p in _random_instances():
            cm = confusion(y, p, C)
            weighted = sum((int(cm.support[c]) * cm.recall(c) for c in range(C) if cm.support[c]), Fraction(0))
            exact = Fraction(int(np.trace(cm.counts)), len(y))
            assert weighted / len(y) == exact
            assert wa(cm) == float(exact) == np.trace(cm.counts) / len(y)
            checked += 1
        notes.append(f"{checked} instances")


def _rel_error(analytic, numeric):
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _central_diff(fn, x, eps=1e-6):
    grad = np.zeros_like(x)
    flat, g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = fn(x)
        flat[i] = old - eps
        down = fn(x)
        flat[i] = old
        g[i] = (up - down) / (2 * eps)
    return grad


def test_criterion_03_loss_gradients():
    with criterion(3, "CE and MAE gradient checks") as notes:
        start = time.perf_counter()
        rng = np.random.default_rng(7)
        worst, shapes = 0.0, 0
        for _ in range(60):
            n, c = int(rng.integers(1, 9)), int(rng.integers(2, 7))
            p = rng.uniform(0.05, 1.0, (n, c))
            y = torch.as_tensor(rng.integers(0, c, n))
            pt = torch.tensor(p, requires_grad=True)
            loss_ce(pt, y).backward()
            numeric = _central_diff(lambda a: float(loss_ce(torch.as_tensor(a), y)), p.copy())
            worst = max(worst, _rel_error(pt.grad.numpy(), numeric))

            m = int(rng.integers(1, 17))
            y_hat = rng.normal(size=m)
            # keep every residual away from the kink at zero
            target = y_hat + rng.uniform(0.01, 1.0, m) * rng.choice([-1.0, 1.0], m)
            yt = torch.as_tensor(target)
            ht = torch.tensor(y_hat, requires_grad=True)
            loss_mae(ht, yt).backward()
            numeric = _central_diff(lambda a: float(loss_mae(torch.as_tensor(a), yt)), y_hat.copy())
            worst = max(worst, _rel_error(ht.grad.numpy(), numeric))
            shapes += 2
        elapsed = time.perf_counter() - start
        notes.append(f"{shapes} shapes, max relative error {worst:.1e}, {elapsed:.1f} s")
        assert worst < 1e-4
        assert elapsed < 30.0


@pytest.mark.slow
def test_criterion_04_end_to_end_synthetic(tmp_path, registry):
    with criterion(4, "end-to-end synthetic smoke") as notes:
        # last layer carries the class signal, so the default last_hidden probe sees it
        spec = RunSpec("within", "synthetic3_class", "synthetic_s0_h32_l2_k1", seed=0, train={"max_epochs": 10})
        runs = []
        for i in range(2):
            h = _harness(tmp_path / f"run{i}", registry)
            start = time.perf_counter()
            rec = run_within_corpus(h, spec)
            runs.append((rec, time.perf_counter() - start))
        (a, ta), (b, tb) = runs
        assert a.ok, a.error
        assert a.extra["counts"]["train"] == 600 and a.extra["counts"]["test"] == 150
        assert a.history["initial_lr"] == 5e-4
        notes.append(f"WA {a.metrics['WA']:.3f}, {ta:.0f} s and {tb:.0f} s, d=768, 10 epochs")
        assert a.metrics["WA"] >= 0.95
        assert a.metrics == b.metrics, "two runs with one seed disagree"
        assert a.history["epochs"] == b.history["epochs"]
        assert max(ta, tb) < 180.0


def test_criterion_05_handcrafted_bypass(tmp_path, registry):
    with criterion(5, "handcrafted vector path") as notes:
        h = _harness(tmp_path, registry)
        h.add_extractor(make_synthetic_extractor(0, 88, 1, 0, margin=8.0, output="vector",
                                                 extractor_id="synthetic_vector88"))
        rec = run_within_corpus(h, RunSpec("within", "synthetic3_class", "synthetic_vector88",
                                           layer="fixed_vector", seed=0))
        assert rec.ok, rec.error
        probe = h.extractor_spec("synthetic_vector88")
        assert probe.is_vector
        notes.append(f"WA {rec.metrics['WA']:.3f}, lr {rec.history['initial_lr']:g}")
        assert rec.history["initial_lr"] == 5e-5
        assert rec.metrics["WA"] >= 0.95


def test_criterion_06_split_fidelity(native_corpora, registry):
    with criterion(6, "split fidelity") as notes:
        checked = []
        for dataset_id in sorted(native_fixtures.BUILDERS):
            manifest = build_manifest(dataset_id, native_corpora(dataset_id), registry=registry)
            for task_id in [None] + [t.task_id for t in registry.tasks_for_dataset(dataset_id)]:
                expected = registry.expected(dataset_id, task_id)
                if expected is None:
                    continue
                result = verify_manifest(manifest, expected, registry.get(task_id) if task_id else None)
                assert result.passed and set(result.deltas.values()) == {0}, result.render()
                checked.append(task_id or dataset_id)
        timit = build_manifest("timit", native_corpora("timit"), registry=registry)
        meld = build_manifest("meld", native_corpora("meld"), registry=registry)
        assert timit.split_counts() == (4620, 0, 1680)
        assert meld.split_counts() == (9986, 1108, 2609)
        local = []
        for dataset_id, env, counts in (("timit", "PARALBENCH_TIMIT_ROOT", (4620, 0, 1680)),
                                        ("meld", "PARALBENCH_MELD_ROOT", (9986, 1108, 2609))):
            root = os.environ.get(env)
            if root:
                m = build_manifest(dataset_id, root, registry=registry)
                assert m.split_counts() == counts, f"local {dataset_id}: {m.split_counts()}"
                local.append(dataset_id)
        notes.append(f"{len(checked)} count checks on {len(native_fixtures.BUILDERS)} recorded-count fixtures")
        notes.append(f"local corpora: {', '.join(local) if local else 'none configured'}")


def test_criterion_07_cross_corpus_filtering(tmp_path, registry):
    with criterion(7, "cross-corpus label filtering") as notes:
        h = _harness(tmp_path, registry)
        source = registry.get("synth_iemocap4_emotion")
        base = dict(probe=SMALL_PROBE, train={"max_epochs": 3})
        msp = run_cross_corpus(h, RunSpec("cross_corpus", source.task_id, "synthetic_s0_h16_l2_k1",
                                          test_task_id="synth_msp5_emotion", **base))
        meld = run_cross_corpus(h, RunSpec("cross_corpus", source.task_id, "synthetic_s0_h16_l2_k1",
                                           test_task_id="synth_meld7_emotion", **base))
        assert msp.ok and meld.ok, (msp.error, meld.error)
        assert "disgust" not in msp.extra["filtered_label_counts"]
        assert msp.extra["dropped_target_classes"] == ["disgust"]
        assert set(meld.extra["dropped_target_classes"]) == {"disgust", "surprise", "fear"}
        assert set(meld.extra["dropped_counts"]) == {"disgust", "surprise", "fear"}
        source_classes = set(h.manifest(source.dataset_id).task_label_space(source).classes)
        for rec in (msp, meld):
            assert set(rec.extra["filtered_label_counts"]) <= source_classes
        notes.append(f"MSP-5 {msp.extra['original_test_count']}->{msp.extra['filtered_test_count']}, "
                     f"MELD-7 {meld.extra['original_test_count']}->{meld.extra['filtered_test_count']}")


@pytest.fixture(scope="module")
def sweep_and_fusion(tmp_path_factory, registry):
    root = tmp_path_factory.mktemp("sweep")
    h = _harness(root, registry)
    extractor = "synthetic_s0_h32_l12_k9"
    common = dict(probe=SMALL_PROBE, train={"max_epochs": 20}, seed=0)
    sweep = run_layer_sweep(h, RunSpec("layer_sweep", "synthetic_small_class", extractor, stride=3, **common))
    fusion = run_fusion_compare(h, RunSpec("fusion_compare", "synthetic_small_class", extractor, **common))
    return sweep, fusion


def test_criterion_08_layer_sweep(sweep_and_fusion):
    with criterion(8, "layer sweep and fusion comparison") as notes:
        sweep, fusion = sweep_and_fusion
        assert sorted(sweep) == [0, 3, 6, 9, 11]
        assert all(r.ok for r in sweep.values()), [r.error for r in sweep.values() if not r.ok]
        scores = {k: r.metrics["WA"] for k, r in sweep.items()}
        best = max(scores, key=scores.get)
        last, fused = fusion.first, fusion.second
        assert last.ok and fused.ok, (last.error, fused.error)
        notes.append("WA by layer " + ", ".join(f"{k}:{v:.3f}" for k, v in sorted(scores.items())))
        notes.append(f"last {last.metrics['WA']:.3f} vs fusion {fused.metrics['WA']:.3f}")
        assert best == 9
        assert fused.metrics["WA"] >= last.metrics["WA"]


def test_criterion_09_fusion_normalization(sweep_and_fusion):
    with criterion(9, "fusion weights sum to one") as notes:
        fused = sweep_and_fusion[1].second
        hist = fused.history
        assert hist["fusion_sum_checks"] == hist["steps"] + 1
        notes.append(f"{hist['fusion_sum_checks']} checks, max |sum - 1| {hist['fusion_sum_max_dev']:.1e}")
        assert hist["fusion_sum_max_dev"] <= 1e-6
        assert abs(sum(hist["fusion_weights"]) - 1.0) <= 1e-6


def test_criterion_10_lora_contract(tmp_path, registry):
    with criterion(10, "LoRA contract") as notes:
        backbone = SyntheticTransformerBackbone(h=768, num_layers=2, heads=12, seed=0)
        adapted, _ = apply_lora(backbone, LoraConfig(rank=8))
        waves = torch.randn(3, 3200, generator=torch.Generator().manual_seed(0))
        with torch.no_grad():
            ref, _ = backbone(waves)
            out, _ = adapted(waves)
        assert all(torch.equal(a, b) for a, b in zip(ref, out)), "adapted output differs at init"

        h = _harness(tmp_path, registry)
        comp = run_lora_compare(h, RunSpec("lora_compare", "synthetic_small_class", "backbone_s0_h768_l2",
                                           probe=SMALL_PROBE, train={"max_epochs": 2}, lora={"rank": 8}))
        lora = comp.second
        assert comp.first.ok and lora.ok, (comp.first.error, lora.error)
        assert lora.extra["backbone_unchanged"] and comp.first.extra["backbone_unchanged"]
        share = lora.extra["lora_parameters"] / lora.extra["backbone_parameters"]
        notes.append(f"{lora.extra['lora_parameters']} adapter vs {lora.extra['backbone_parameters']} "
                     f"backbone parameters ({100 * share:.2f}%)")
        assert share < 0.01


def test_criterion_11_replay(tmp_path, registry):
    with criterion(11, "replay reproduces metrics") as notes:
        h = _harness(tmp_path, registry)
        fast = dict(probe=SMALL_PROBE, train={"max_epochs": 3}, seed=5)
        h.add_extractor(make_synthetic_extractor(1, 24, 1, 0, margin=8.0, output="vector",
                                                 extractor_id="replay_vector"))
        specs = [
            RunSpec("within", "synthetic_small_class", "synthetic_s1_h16_l3_k2", **fast),
            RunSpec("within", "synthetic_small_class", "synthetic_s1_h16_l3_k2", layer="all_layers", **fast),
            RunSpec("within", "synthetic_small_class", "replay_vector", layer="fixed_vector", **fast),
            RunSpec("within", "synthetic_reg", "synthetic_s1_h16_l3_k2", **fast),
            RunSpec("within", "synthetic_reg", "-", architecture="mean_baseline", **fast),
            RunSpec("cross_corpus", "synth_iemocap4_emotion", "synthetic_s1_h16_l3_k2",
                    test_task_id="synth_msp5_emotion", **fast),
        ]
        records = [run_within_corpus(h, s) if s.protocol == "within" else run_cross_corpus(h, s) for s in specs]
        records += list(run_layer_sweep(h, RunSpec("layer_sweep", "synthetic_small_class", "synthetic_s1_h16_l3_k2",
                                                   stride=2, **fast)).values())
        assert all(r.ok for r in records), [r.error for r in records if not r.ok]
        worst = 0.0
        for rec in h.store.records():
            again = replay(h, rec)
            assert again.ok, again.error
            worst = max(worst, max(abs(again.metrics[k] - rec.metrics[k]) for k in rec.metrics))
            assert metrics_match(rec, again, tol=1e-6), rec.spec_hash
        notes.append(f"{len(h.store.records())} records, max deviation {worst:.1e}")


def test_criterion_12_report_fidelity(tmp_path, registry, capsys):
    with criterion(12, "report fidelity") as notes:
        h = _harness(tmp_path, registry)
        fast = dict(probe=SMALL_PROBE, train={"max_epochs": 3})
        for ex in ("synthetic_s0_h16_l3_k2", "synthetic_s1_h16_l3_k1", "synthetic_s2_h16_l3_k0"):
            for task in ("synthetic_small_class", "synthetic_reg"):
                assert run_within_corpus(h, RunSpec("within", task, ex, **fast)).ok
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(f"version: 1\nresults_root: {tmp_path / 'results'}\n")
        argv = ["--config", str(cfg), "report", "--task", "synthetic_small_class", "--task", "synthetic_reg"]
        outputs = []
        for _ in range(2):
            capsys.readouterr()
            assert cli_main(argv) == 0
            outputs.append(capsys.readouterr().out)
        assert outputs[0].encode() == outputs[1].encode(), "report output differs between runs"
        lines = outputs[0].splitlines()
        groups = [g.strip() for g in lines[0].split("|")[1:]]
        metrics = [m.strip() for m in lines[1].split("|")[1:]]
        assert groups == ["synthetic_small_class", "synthetic_reg"]
        assert metrics == ["WA", "UA", "WF1", "MAE"]
        body = [line for line in lines[3:] if line.startswith("synthetic_")]
        assert len(body) == 3
        cell = re.compile(r"^(\d*\.\d{3})(\[(\d)\])?$")
        maes = []
        for line in body:
            cells = [c.strip() for c in line.split("|")[1:]]
            parsed = [cell.match(c) for c in cells]
            assert all(parsed), line
            maes.append((float(parsed[3].group(1)), int(parsed[3].group(3))))
        # MAE emphasis runs the other way: the smallest error gets rank 1
        by_value = sorted(maes)
        assert [r for _, r in by_value] == sorted(r for _, r in maes)
        notes.append("3 extractors x 2 tasks, two renders byte-identical, MAE rank 1 = lowest")
