"""Shared fixtures: tiny log corpora and a desk-scale pipeline run.

The session-scoped pipeline run feeds every test that needs trained models
or scored users, so the expensive work happens once per pytest session.
"""
from __future__ import annotations

import json
from pathlib import Path

import pytest

from ubsdetect import pipeline
from ubsdetect.config import load_config


def write_csv(path: Path, header: str, rows: list[str]) -> Path:
    path.write_text("\n".join([header, *rows]) + ("\n" if rows else "\n"))
    return path


LOGON_HEADER = "id,date,user,pc,activity"
DEVICE_HEADER = "id,date,user,pc,activity"
FILE_HEADER = "id,date,user,pc,filename,content"
HTTP_HEADER = "id,date,user,pc,url"
EMAIL_HEADER = "id,date,user,pc,to,cc,bcc,from,size,attachments,content"


@pytest.fixture()
def log_dir(tmp_path: Path) -> Path:
    """Empty directory pre-seeded with all five headers and no rows."""
    d = tmp_path / "logs"
    d.mkdir()
    write_csv(d / "logon.csv", LOGON_HEADER, [])
    write_csv(d / "device.csv", DEVICE_HEADER, [])
    write_csv(d / "file.csv", FILE_HEADER, [])
    write_csv(d / "http.csv", HTTP_HEADER, [])
    write_csv(d / "email.csv", EMAIL_HEADER, [])
    return d


def small_config(**overrides) -> dict:
    """Desk config shrunk for fast tests."""
    cfg = load_config(None)
    cfg["synth"].update({"n_benign": 24, "n_malicious": 6})
    cfg["ubs"]["days"] = 30
    cfg["split"]["train_benign"] = 16
    cfg["transformer"].update({"epochs": 3})
    cfg["auto_tab"].update({"epochs": 8})
    cfg["auto_ubs"].update({"epochs": 5})
    for key, value in overrides.items():
        if isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory) -> tuple[dict, Path]:
    """One small end-to-end run shared across the test session."""
    out = tmp_path_factory.mktemp("desk_run")
    cfg = small_config()
    pipeline.run_pipeline(cfg, out)
    return cfg, out


@pytest.fixture(scope="session")
def desk_report(desk_run) -> dict:
    _, out = desk_run
    return json.loads((out / "report.json").read_text())
