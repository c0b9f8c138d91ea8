import json

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from plca import datagen

settings.register_profile("plca", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("plca")

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_SPEC = {
    "splits": {
        "source_train": {"count": 8, "seed_start": 0, "style": "source"},
        "target_train": {"count": 8, "seed_start": 100000, "style": "target"},
        "target_test": {"count": 4, "seed_start": 200000, "style": "target"},
    }
}


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """Small benchmark (8/8/4 scenes) shared by the training and CLI tests."""
    out = tmp_path_factory.mktemp("tiny")
    datagen.write_benchmark(out, datagen.BenchmarkSpec.from_dict(TINY_SPEC), export_ppm=1)
    (out / "spec.json").write_text(json.dumps(TINY_SPEC))
    return out


def tiny_config(data, **kw):
    cfg = {"source_dir": str(data / "source_train"), "target_dir": str(data / "target_train"),
           "test_dir": str(data / "target_test"), "max_iters": 6, "base_lr": 0.02,
           "checkpoint_every": 3, "check_every": 2}
    cfg.update(kw)
    return cfg
