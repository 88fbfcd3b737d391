import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from leafscope.cli import run_command  # noqa: E402
from leafscope.streams import BatchStream  # noqa: E402
from leafscope import LEAF_CLASSES  # noqa: E402
from leafscope.synthetic import _class_image, make_blank_layout, make_synthetic_dataset  # noqa: E402

SMOKE_CONFIG = {
    "dataset": {"ratio": 0.8, "seed": 0},
    "preprocess": {"storage_size": 240, "model_input_size": 224},
    "augment": {"enabled": True, "seed": 0},
    "model": {"backbone": "toyconv", "pretrained": False, "dropout_rate": 0.3},
    "train": {"epochs": 20, "batch_size": 32, "base_learning_rate": 0.01, "phase1_epochs": 2,
              "phase2_lr_scale": 1.0, "early_stop_patience": 10, "seed": 0},
}


@pytest.fixture(scope="session")
def published_layout(tmp_path_factory):
    """8 classes x 800 tiny images, the published corpus layout."""
    return make_blank_layout(tmp_path_factory.mktemp("paper") / "root", {c: 800 for c in LEAF_CLASSES})


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    return make_synthetic_dataset(tmp_path_factory.mktemp("synthetic") / "data", per_class=64)


@pytest.fixture(scope="session")
def smoke_run(synthetic_root, tmp_path_factory):
    """Full CLI pipeline on the 8 x 64 synthetic corpus with toyconv."""
    work = tmp_path_factory.mktemp("smoke")
    cfg = json.loads(json.dumps(SMOKE_CONFIG))
    cfg["dataset"]["root"] = str(synthetic_root)
    cfg["output"] = {"run_dir": str(work / "run")}
    cfg_path = work / "smoke.json"
    cfg_path.write_text(json.dumps(cfg))
    t0 = time.perf_counter()
    codes = {
        "prepare": run_command(["prepare", "--config", str(cfg_path)]),
        "train": run_command(["train", "--config", str(cfg_path)]),
        "evaluate": run_command(["evaluate", "--config", str(cfg_path)]),
        "report": run_command(["report", "--run", str(work / "run")]),
        "compare": run_command(["compare", str(work / "run"), "--out", str(work / "compare")]),
    }
    return {"codes": codes, "seconds": time.perf_counter() - t0, "run_dir": work / "run",
            "compare_dir": work / "compare", "config_path": cfg_path}


def tiny_arrays(per_class=8, num_classes=8, size=72, seed=0):
    imgs, labels = [], []
    for c in range(num_classes):
        for k in range(per_class):
            imgs.append(_class_image(c, num_classes, size, np.random.default_rng([seed, c, k])))
            labels.append(c)
    return np.stack(imgs), np.array(labels)


@pytest.fixture(scope="session")
def tiny_streams():
    """Small in-memory streams (64 px inputs) for fast trainer tests."""
    x, y = tiny_arrays()
    xv, yv = tiny_arrays(per_class=2, seed=1)
    train = BatchStream(x, y, batch_size=16, input_size=64, train=True, seed=0)
    val = BatchStream(xv, yv, batch_size=16, input_size=64)
    return train, val


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
