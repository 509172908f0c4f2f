"""Test configuration and fixtures."""
import logging
import os

os.environ.setdefault("FUME_ENV", "testing")

import numpy as np
import pytest
from click.testing import CliRunner

from fume.net import build
from fume.synthgas import build_dataset

SMALL_COUNTS = {6.5: 10, 5.9: 10, 5.0: 10}


def pytest_collection_modifyitems(config, items):
    """Skip desk-scale runs unless FUME_RUN_SLOW=1."""
    if os.getenv("FUME_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set FUME_RUN_SLOW=1 to run desk-scale training")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def restore_root_logging():
    """CLI runs install handlers on captured streams; drop them afterwards."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def rng():
    """A fixed-seed generator."""
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fume_net():
    """A float64 fume network at seed 0 (read-only: do not train it)."""
    return build("fume", seed=0, dtype=np.float64)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A 30-sample 64x64 dataset: ten samples at each of three pH levels."""
    root = tmp_path_factory.mktemp("synthgas")
    return build_dataset(SMALL_COUNTS, seed=7, out_dir=root, size=64)


@pytest.fixture
def write_config(tmp_path):
    """Write a flat run-config file and return its path."""
    def _write(name="run.cfg", **values):
        path = tmp_path / name
        path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()), encoding="utf-8")
        return path
    return _write


@pytest.fixture
def tiny_run_values(small_dataset, tmp_path):
    """Run-config values for a one-epoch pipeline on the small dataset."""
    return {
        "seed": 3,
        "dataset": str(small_dataset.root),
        "out_dir": str(tmp_path / "run"),
        "epochs": 1,
        "batch_size": 8,
        "eval_batch_size": 8,
        "augment": "false",
        "prefetch": 0,
        "macs_size": 64,
        "bench_size": 64,
        "bench_warmup": 1,
        "bench_iterations": 2,
    }


@pytest.fixture
def runner():
    """A click CLI runner."""
    return CliRunner()
