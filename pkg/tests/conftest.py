"""Shared fixtures: desk-scale datasets and trained models, plus the acceptance log.

The GP and sine datasets and their FNO models are built once per session.
Set ``ROUGHSLIP_ARTIFACTS`` to a directory to keep them between sessions; an
existing dataset is reused only if its stored config matches exactly, and a
model only if it was trained on that exact data file.
"""

from __future__ import annotations

import json
import logging
import os
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from roughslip import dataset as ds
from roughslip import fno

GP_CONFIG = ds.DatasetConfig(K=2000, J=128, seed=0)
SINE_CONFIG = ds.DatasetConfig.sine(K=1000, J=128, seed=1)
EPOCHS = 200

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@dataclass
class Artifacts:
    path: Path
    manifest: dict
    array: np.ndarray
    model: fno.FnoModel
    train_loss: list
    test_loss: list
    seconds: dict


@pytest.fixture(scope="session")
def artifact_root(tmp_path_factory) -> Path:
    root = os.environ.get("ROUGHSLIP_ARTIFACTS")
    if root:
        path = Path(root)
        path.mkdir(parents=True, exist_ok=True)
        return path
    return tmp_path_factory.mktemp("artifacts")


def _build(root: Path, name: str, cfg: ds.DatasetConfig) -> Artifacts:
    data_dir = root / name
    seconds = {"generate": 0.0, "train": 0.0}
    manifest = None
    if (data_dir / ds.MANIFEST).exists():
        m = ds.read_manifest(data_dir)
        if m["config"] == cfg.to_dict():
            manifest = m
    if manifest is None:
        t = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            manifest = ds.generate_dataset(cfg, data_dir)
        seconds["generate"] = time.perf_counter() - t
    arr = ds.load_array(data_dir, manifest)
    digest = ds.file_digest(data_dir)
    model_path = data_dir / f"model{EPOCHS}.rsfno"
    hist_path = data_dir / f"history{EPOCHS}.json"
    model = None
    if model_path.exists() and hist_path.exists():
        hist = json.loads(hist_path.read_text())
        if hist.get("data_digest") == digest:
            model = fno.load_model(model_path)
            seconds["train"] = hist["seconds"]
    if model is None:
        train, test = ds.split(manifest)
        x, y = fno.arrays_to_io(arr)
        st = fno.train(x[train], y[train], mean=manifest["stats"]["mean"], std=manifest["stats"]["std"],
                       x_test=x[test], y_test=y[test], epochs=EPOCHS, seed=0, log_every=20)
        st.model.meta.update({"data_digest": digest, "epochs": EPOCHS})
        fno.save_model(st.model, model_path)
        hist = {"train": st.train_loss, "test": st.test_loss, "seconds": st.seconds, "data_digest": digest}
        hist_path.write_text(json.dumps(hist))
        model = st.model
        seconds["train"] = st.seconds
    return Artifacts(data_dir, manifest, arr, model, hist["train"], hist["test"], seconds)


@pytest.fixture(scope="session")
def gp_artifacts(artifact_root) -> Artifacts:
    """K=2000 GP micro domains at J=128 and the FNO trained on them for 200 epochs."""
    logging.getLogger("roughslip").setLevel(logging.INFO)
    return _build(artifact_root, "gp2000", GP_CONFIG)


@pytest.fixture(scope="session")
def sine_artifacts(artifact_root) -> Artifacts:
    """Sine-channel micro boxes (K=1000, J=128) and their FNO, for the Case II coupling test."""
    return _build(artifact_root, "sine1000", SINE_CONFIG)


@pytest.fixture
def acceptance():
    """``acceptance(n, passed, detail)`` records one criterion for the summary."""

    def record(n: int, passed: bool, detail: str):
        line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE[n] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
