"""Pipeline stages behind the CLI; each writes its artifact plus run metadata.

Stage wiring (the end-to-end run executes them in order):
synth -> ingest -> build-ubs -> train (per model) -> score -> detect -> eval.
Every artifact path is derived from the output directory, so running stages
individually with the same config reproduces exactly what `pipeline` writes.
"""
from __future__ import annotations

import json
import logging
import os
import platform
import time
from datetime import date
from pathlib import Path

import numpy as np

from . import autoencoder, detectors, evaluation, synth, transformer
from .config import config_hash
from .errors import MissingInput
from .ingest import IngestConfig, ingest_logs, read_sessions, write_sessions
from .scores import read_scores, write_scores
from .synth import SynthConfig, read_labels
from .ubs import Label, UbsDims, apply_norm, build_ubs, fit_norm, read_ubs, write_ubs

log = logging.getLogger(__name__)

LOG_FILES = ("logon", "device", "file", "http", "email")


def _paths(out: Path) -> dict[str, Path]:
    return {
        "synth_dir": out / "synth",
        "sessions": out / "sessions.tsv",
        "ubs_dir": out / "ubs",
        "models_dir": out / "models",
        "scores_dir": out / "scores",
        "verdicts_dir": out / "verdicts",
        "meta_dir": out / "meta",
        "report": out / "report.json",
    }


def _logs_dir(cfg: dict, out: Path) -> Path:
    configured = cfg["paths"]["logs_dir"]
    return Path(configured) if configured else _paths(out)["synth_dir"]


def _labels_path(cfg: dict, out: Path) -> Path:
    configured = cfg["paths"]["labels"]
    return Path(configured) if configured else _logs_dir(cfg, out) / "labels.csv"


def _write_meta(cfg: dict, out: Path, stage: str, started: float, extra: dict | None = None) -> None:
    meta_dir = _paths(out)["meta_dir"]
    meta_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "stage": stage,
        "seed": cfg["seed"],
        "config_hash": config_hash(cfg),
        "wall_time_s": round(time.monotonic() - started, 3),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "threads": os.environ.get("OPENBLAS_NUM_THREADS", os.environ.get("OMP_NUM_THREADS", "default")),
    }
    if extra:
        meta.update(extra)
    with open(meta_dir / f"{stage}.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def _dims(cfg: dict) -> UbsDims:
    u = cfg["ubs"]
    return UbsDims(u["days"], u["sessions"], u["features"])


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingInput(f"{stage}: required input {path} does not exist")
    return path


# -- stages -------------------------------------------------------------------


def stage_synth(cfg: dict, out: Path) -> None:
    started = time.monotonic()
    s = cfg["synth"]
    n_days = s["n_days"] if s["n_days"] is not None else cfg["ubs"]["days"]
    sc = SynthConfig(
        seed=cfg["seed"],
        n_benign=s["n_benign"],
        n_malicious=s["n_malicious"],
        n_days=n_days,
        start_date=date.fromisoformat(cfg["ingest"]["window_start"]),
        internal_domain=cfg["ingest"]["internal_domain"],
        http_rate=s["http_rate"],
        email_rate=s["email_rate"],
        file_rate=s["file_rate"],
        device_prob=s["device_prob"],
        min_anomalous_sessions=s["min_anomalous_sessions"],
        max_anomalous_sessions=s["max_anomalous_sessions"],
    )
    paths = synth.generate(sc, _paths(out)["synth_dir"])
    log.info("synth: wrote %d files to %s", len(paths), _paths(out)["synth_dir"])
    _write_meta(cfg, out, "synth", started)


def stage_ingest(cfg: dict, out: Path) -> None:
    started = time.monotonic()
    logs = _logs_dir(cfg, out)
    csvs = [logs / f"{name}.csv" for name in LOG_FILES]
    for p in csvs:
        _require(p, "ingest")
    ic = IngestConfig(
        window_start=date.fromisoformat(cfg["ingest"]["window_start"]),
        n_days=cfg["ubs"]["days"],
        max_sessions_per_day=cfg["ubs"]["sessions"],
        internal_domain=cfg["ingest"]["internal_domain"],
        url_categories_path=cfg["ingest"]["url_categories_path"],
        malformed_tolerance=cfg["ingest"]["malformed_tolerance"],
    )
    sessions, stats = ingest_logs(csvs, ic)
    write_sessions(sessions, _paths(out)["sessions"])
    log.info("ingest: %d sessions from %d events", len(sessions), stats.events)
    _write_meta(cfg, out, "ingest", started, {"parse_stats": stats.as_dict()})


def stage_build_ubs(cfg: dict, out: Path) -> None:
    started = time.monotonic()
    sessions = read_sessions(_require(_paths(out)["sessions"], "build-ubs"))
    raw_labels = read_labels(_require(_labels_path(cfg, out), "build-ubs"))
    labels = {u: Label[v.upper()] for u, v in raw_labels.items()}
    dims = _dims(cfg)
    full = build_ubs(sessions, dims, labels)

    benign = sorted(u for u, t in full.items() if t.label is Label.BENIGN)
    n_train = cfg["split"]["train_benign"]
    if n_train > len(benign):
        raise MissingInput(
            f"build-ubs: split wants {n_train} benign training users, data has {len(benign)}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"]).spawn(1)[0])
    order = list(benign)
    rng.shuffle(order)
    train_users = set(order[:n_train])
    train_map = {u: full[u] for u in sorted(train_users)}
    test_map = {u: full[u] for u in sorted(set(full) - train_users)}

    stats = fit_norm(train_map)
    ubs_dir = _paths(out)["ubs_dir"]
    ubs_dir.mkdir(parents=True, exist_ok=True)
    write_ubs(apply_norm(train_map, stats), ubs_dir / "train.ubs", dims)
    write_ubs(apply_norm(test_map, stats), ubs_dir / "test.ubs", dims)
    stats.save(ubs_dir / "norm_stats.json")
    log.info("build-ubs: %d train / %d test users", len(train_map), len(test_map))
    _write_meta(cfg, out, "build-ubs", started, {"train_users": len(train_map), "test_users": len(test_map)})


def _model_seed(cfg: dict, model: str) -> int:
    # stable per-model offset so models do not share init/shuffle streams
    return cfg["seed"] + {"transformer": 0, "auto-tab": 1, "auto-ubs": 2}[model]


def stage_train(cfg: dict, out: Path, model: str) -> None:
    started = time.monotonic()
    dims = _dims(cfg)
    train_map, _ = read_ubs(_require(_paths(out)["ubs_dir"] / "train.ubs", "train"), dims)
    models_dir = _paths(out)["models_dir"]
    models_dir.mkdir(parents=True, exist_ok=True)

    if model == "transformer":
        t = cfg["transformer"]
        econfig = transformer.EncoderConfig(
            dims=dims,
            d_model=t["d_model"],
            n_blocks=t["n_blocks"],
            n_heads=t["n_heads"],
            d_ff=t["d_ff"],
            dropout=t["dropout"],
            learning_rate=t["learning_rate"],
            epochs=t["epochs"],
            seed=_model_seed(cfg, model),
            early_stop_patience=t["early_stop_patience"],
            early_stop_min_delta=t["early_stop_min_delta"],
        )
        net, report = transformer.train(econfig, train_map)
        transformer.save_model(net, models_dir / "transformer.ckpt")
    else:
        section = cfg["auto_tab"] if model == "auto-tab" else cfg["auto_ubs"]
        width = dims.features if model == "auto-tab" else dims.slots * dims.features
        aconfig = autoencoder.MlpAeConfig(
            input_width=width,
            hidden=list(section["hidden"]),
            dropout=section["dropout"],
            learning_rate=section["learning_rate"],
            epochs=section["epochs"],
            seed=_model_seed(cfg, model),
            early_stop_patience=section["early_stop_patience"],
            early_stop_min_delta=section["early_stop_min_delta"],
        )
        if model == "auto-tab":
            net, report = autoencoder.train_tab(aconfig, train_map)
        else:
            net, report = autoencoder.train_ubs(aconfig, train_map, dims)
        autoencoder.save_model(net, models_dir / f"{model}.ckpt")
    with open(models_dir / f"{model}_train.json", "w", encoding="utf-8") as fh:
        json.dump(report.as_dict(), fh, indent=1)
    log.info("train[%s]: %d epochs, final loss %.6f", model, report.epochs_run, report.epoch_losses[-1])
    _write_meta(cfg, out, f"train-{model}", started, {"train_report": report.as_dict()})


def stage_score(cfg: dict, out: Path, model: str) -> None:
    started = time.monotonic()
    dims = _dims(cfg)
    ubs_dir = _paths(out)["ubs_dir"]
    ckpt = _require(_paths(out)["models_dir"] / f"{model}.ckpt", "score")
    scores_dir = _paths(out)["scores_dir"]
    scores_dir.mkdir(parents=True, exist_ok=True)
    for split in ("train", "test"):
        data, _ = read_ubs(_require(ubs_dir / f"{split}.ubs", "score"), dims)
        if model == "transformer":
            net = transformer.load_model(ckpt)
            scores = transformer.score(net, data)
        elif model == "auto-tab":
            net = autoencoder.load_model(ckpt)
            scores = autoencoder.score_tab(net, data)
        else:
            net = autoencoder.load_model(ckpt)
            scores = autoencoder.score_ubs(net, data, dims)
        write_scores(scores, scores_dir / f"{model}_{split}.csv")
    log.info("score[%s]: wrote train/test summaries", model)
    _write_meta(cfg, out, f"score-{model}", started)


def stage_detect(cfg: dict, out: Path, model: str, method: str) -> None:
    started = time.monotonic()
    scores_dir = _paths(out)["scores_dir"]
    train_scores = read_scores(_require(scores_dir / f"{model}_train.csv", "detect"))
    test_scores = read_scores(_require(scores_dir / f"{model}_test.csv", "detect"))
    d = cfg["detectors"]
    params = detectors.DetectorParams(
        nu=d["nu"],
        gamma=d["gamma"],
        lof_k=d["lof_k"],
        lof_threshold=d["lof_threshold"],
        n_trees=d["n_trees"],
        subsample=d["subsample"],
        iforest_threshold=d["iforest_threshold"],
        seed=cfg["seed"],
        summary_mode=d["summary_mode"],
    )
    verdicts = detectors.detect(train_scores, test_scores, method, params)
    verdicts_dir = _paths(out)["verdicts_dir"]
    verdicts_dir.mkdir(parents=True, exist_ok=True)
    detectors.write_verdicts(verdicts, verdicts_dir / f"{model}_{method}.csv")
    flagged = sum(1 for v in verdicts if v.predicted is Label.MALICIOUS)
    log.info("detect[%s/%s]: flagged %d of %d users", model, method, flagged, len(verdicts))
    _write_meta(cfg, out, f"detect-{model}-{method}", started)


def stage_eval(cfg: dict, out: Path) -> Path:
    started = time.monotonic()
    verdicts_dir = _paths(out)["verdicts_dir"]
    rows = []
    for model in cfg["models"]:
        for method in detectors.METHODS:
            path = _require(verdicts_dir / f"{model}_{method}.csv", "eval")
            verdicts = detectors.read_verdicts(path)
            rows.append(evaluation.compute_metrics(verdicts, model=model, detector=method, test_set="test"))
            evaluation.write_roc(verdicts, out / f"roc_{model}_{method}_test.csv")
    chash = config_hash(cfg)
    report_path = evaluation.emit_report(rows, out, run_id=chash[:12], config_hash=chash)
    _write_meta(cfg, out, "eval", started)
    return report_path


def run_pipeline(cfg: dict, out: Path) -> Path:
    """All stages in order; returns the report path."""
    stage_synth(cfg, out)
    stage_ingest(cfg, out)
    stage_build_ubs(cfg, out)
    for model in cfg["models"]:
        stage_train(cfg, out, model)
        stage_score(cfg, out, model)
        for method in detectors.METHODS:
            stage_detect(cfg, out, model, method)
    return stage_eval(cfg, out)
