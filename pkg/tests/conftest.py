from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import native_fixtures  # noqa: E402
from paralbench.features import FeatureCache  # noqa: E402
from paralbench.protocols import Harness  # noqa: E402
from paralbench.store import ResultsStore  # noqa: E402
from paralbench.tasks import load_builtin_catalog  # noqa: E402

# small probe settings for tests that exercise plumbing rather than accuracy
SMALL_PROBE = {"d": 32, "attention_heads": 4}
FAST_TRAIN = {"max_epochs": 3}


@pytest.fixture(scope="session")
def registry():
    return load_builtin_catalog()


class NativeCorpora:
    """Builds native-layout fixtures on first use and keeps them for the session."""

    def __init__(self, base: Path):
        self.base = base
        self._roots: dict[str, Path] = {}

    def __call__(self, dataset_id: str) -> Path:
        if dataset_id not in self._roots:
            self._roots[dataset_id] = native_fixtures.BUILDERS[dataset_id](self.base / dataset_id)
        return self._roots[dataset_id]


@pytest.fixture(scope="session")
def native_corpora(tmp_path_factory):
    return NativeCorpora(tmp_path_factory.mktemp("native"))


@pytest.fixture
def harness(tmp_path, registry):
    return Harness(registry=registry, cache=FeatureCache(tmp_path / "cache"),
                   store=ResultsStore(tmp_path / "results"), checkpoint_dir=tmp_path / "checkpoints",
                   config_hash="test")


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
