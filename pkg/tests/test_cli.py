import subprocess
import sys

import pytest
import yaml

import native_fixtures as nf
from paralbench.cli import load_grid, main
from paralbench.config import HarnessConfig

PROBE = {"d": 32, "attention_heads": 4}


@pytest.fixture
def cli(tmp_path, capsys):
    """Runs the CLI against a config rooted in tmp_path; returns (exit code, stdout, stderr)."""
    cfg = tmp_path / "paralbench.yaml"
    cfg.write_text(yaml.safe_dump({"version": 1, "cache_root": "cache", "results_root": "results",
                                   "manifest_dir": "manifests", "checkpoint_dir": "ckpt"}))

    def run(*argv):
        code = main(["--config", str(cfg), *argv])
        out = capsys.readouterr()
        return code, out.out, out.err

    run.root = tmp_path
    return run


def _grid(path, runs, **extra):
    path.write_text(yaml.safe_dump({"version": 1, "defaults": {"probe": PROBE, "train": {"max_epochs": 2}},
                                    "runs": runs, **extra}))
    return path


class TestManifestVerbs:
    def test_manifest_is_deterministic(self, cli):
        code, out, _ = cli("manifest", "--dataset", "synthetic3")
        assert code == 0
        assert "train 600 / validation - / test 150" in out
        first = (cli.root / "manifests" / "synthetic3.jsonl").read_bytes()
        cli("manifest", "--dataset", "synthetic3")
        assert (cli.root / "manifests" / "synthetic3.jsonl").read_bytes() == first

    def test_random_policy_uses_seed(self, cli):
        code, out, _ = cli("manifest", "--dataset", "synthetic3", "--random", "0.5", "--seed", "2",
                           "--out", str(cli.root / "r.jsonl"))
        assert code == 0 and "random" in out

    def test_native_corpus_and_verify(self, cli):
        root = nf.make_timit(cli.root / "timit", train_speakers=3, test_speakers=2, per_speaker=2)
        code, out, _ = cli("manifest", "--dataset", "timit", "--raw-root", str(root))
        assert code == 0
        code, out, _ = cli("verify", "--dataset", "timit", "--expected", "6,0,4")
        assert code == 0 and "PASS" in out
        code, out, _ = cli("verify", "--dataset", "timit")
        assert code == 4 and "FAIL" in out

    def test_bad_raw_root_is_data_error(self, cli):
        code, _, err = cli("manifest", "--dataset", "meld", "--raw-root", str(cli.root / "nowhere"))
        assert code == 4 and "data error" in err


class TestExtract:
    def test_warm_cache(self, cli):
        args = ("extract", "--extractor", "synthetic_s0_h16_l4_k2", "--dataset", "synthetic_small", "--layers", "all")
        code, out, _ = cli(*args)
        assert code == 0 and "0 hits, 210 misses" in out
        code, out, _ = cli(*args)
        assert "210 hits, 0 misses" in out and "100.0% hits" in out and "extractor calls: 0" in out
        code, out, _ = cli("extract", "--extractor", "synthetic_s0_h16_l4_k2", "--dataset", "synthetic_small",
                           "--layers", "2", "--split", "test")
        assert "60 sliced" in out and "extractor calls: 0" in out


class TestRunAndReport:
    def test_grid_dedup_and_report(self, cli):
        grid = _grid(cli.root / "grid.yaml", [
            {"protocol": "within", "tasks": ["synthetic_small_class"],
             "extractors": ["synthetic_s0_h16_l3_k2", "synthetic_s1_h16_l3_k2"]},
        ])
        code, out, _ = cli("run", "--grid", str(grid))
        assert code == 0 and "2 records: 2 trained, 0 reused, 0 failed" in out
        code, out, _ = cli("run", "--grid", str(grid))
        assert code == 0 and "2 records: 0 trained, 2 reused, 0 failed" in out
        code, first, _ = cli("report", "--task", "synthetic_small_class")
        assert code == 0 and "synthetic_s1_h16_l3_k2" in first and "WF1" in first
        _, second, _ = cli("report", "--task", "synthetic_small_class")
        assert first == second
        code, csv_text, _ = cli("report", "--style", "csv")
        assert csv_text.startswith("row,group,metric,value,rank,record_id")

    def test_failure_exits_five(self, cli):
        grid = _grid(cli.root / "grid.yaml", [{"task": "synthetic_small_class", "extractor": "nope"}])
        code, out, _ = cli("run", "--grid", str(grid))
        assert code == 5 and "1 failed" in out

    def test_force_retrains(self, cli):
        grid = _grid(cli.root / "grid.yaml", [{"task": "synthetic_small_class", "extractor": "synthetic_s0_h16_l3_k2"}])
        cli("run", "--grid", str(grid))
        code, out, _ = cli("run", "--grid", str(grid), "--force")
        assert "1 trained, 0 reused" in out

    def test_sweep_and_fusion_verbs(self, cli):
        flags = ("--d", "32", "--epochs", "2")
        code, out, _ = cli("sweep", "--task", "synthetic_small_class", "--extractor", "synthetic_s0_h16_l4_k2",
                           "--stride", "2", *flags)
        assert code == 0 and "best layer by WA:" in out
        code, out, _ = cli("fusion", "--task", "synthetic_small_class", "--extractor", "synthetic_s0_h16_l4_k2",
                           *flags)
        assert code == 0 and "delta (fusion - last_hidden)" in out
        code, out, _ = cli("report", "--style", "fusion")
        assert code == 0 and "Fusion State" in out

    def test_empty_report_is_data_error(self, cli):
        code, _, err = cli("report")
        assert code == 4


class TestErrors:
    def test_usage_error(self, cli):
        with pytest.raises(SystemExit) as exc:
            main(["manifest"])
        assert exc.value.code == 2

    def test_bad_config(self, tmp_path, capsys):
        bad = tmp_path / "c.yaml"
        bad.write_text("version: 9\n")
        assert main(["--config", str(bad), "report"]) == 3

    def test_bad_grid(self, cli):
        (cli.root / "g.yaml").write_text("version: 1\nruns: []\n")
        assert cli("run", "--grid", str(cli.root / "g.yaml"))[0] == 3

    def test_grid_expansion(self, tmp_path):
        grid = tmp_path / "g.yaml"
        grid.write_text(yaml.safe_dump({"version": 1, "runs": [
            {"protocol": "cross_corpus", "extractor": "e", "pairs": [["a", "b"], ["a", "c"]], "seeds": [0, 1]},
            {"tasks": ["t1", "t2"], "extractors": ["e1", "e2"]},
        ]}))
        specs, _ = load_grid(grid, HarnessConfig())
        assert len(specs) == 4 + 4
        assert {s.test_task_id for s in specs[:4]} == {"b", "c"}

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "paralbench", "--help"], capture_output=True, text=True)
        assert out.returncode == 0 and "report" in out.stdout
