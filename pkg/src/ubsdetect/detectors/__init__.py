"""Novelty detectors over per-user error summaries.

All three detectors fit on benign training summaries only and share one
score orientation: higher raw score = more anomalous. A test user is flagged
Malicious exactly when its raw score exceeds the method's threshold (0 for
the margin-based OCSVM).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import UnknownMethod
from ..scores import UserScore
from ..ubs import Label
from .iforest import IforestModel, avg_path_length, iforest_fit, iforest_score
from .lof import LofModel, lof_fit, lof_score
from .ocsvm import OcsvmModel, kkt_residual, ocsvm_fit, ocsvm_score, rbf_kernel, scale_gamma

METHODS = ("ocsvm", "lof", "iforest")

__all__ = [
    "METHODS",
    "DetectorParams",
    "DetectorVerdict",
    "detect",
    "write_verdicts",
    "read_verdicts",
    "IforestModel",
    "LofModel",
    "OcsvmModel",
    "avg_path_length",
    "iforest_fit",
    "iforest_score",
    "kkt_residual",
    "lof_fit",
    "lof_score",
    "ocsvm_fit",
    "ocsvm_score",
    "rbf_kernel",
    "scale_gamma",
]


@dataclass
class DetectorParams:
    nu: float = 0.1
    gamma: float | None = None  # None = 1/(d * var) heuristic
    lof_k: int = 20
    lof_threshold: float = 1.5
    n_trees: int = 100
    subsample: int = 256
    iforest_threshold: float = 0.55
    seed: int = 0
    summary_mode: str = "stats4"  # or "mean": detectors see only the mean column

    def as_dict(self) -> dict:
        return {
            "nu": self.nu,
            "gamma": self.gamma,
            "lof_k": self.lof_k,
            "lof_threshold": self.lof_threshold,
            "n_trees": self.n_trees,
            "subsample": self.subsample,
            "iforest_threshold": self.iforest_threshold,
            "seed": self.seed,
            "summary_mode": self.summary_mode,
        }


@dataclass
class DetectorVerdict:
    user: str
    method: str
    raw_score: float
    predicted: Label
    label: Label  # ground truth, carried through for eval


def _summary_matrix(scores: list[UserScore], mode: str) -> np.ndarray:
    x = np.stack([s.summary for s in scores])
    if mode == "mean":
        return x[:, :1]
    if mode == "stats4":
        return x
    raise ValueError(f"unknown summary_mode {mode!r}")


def detect(
    train_scores: list[UserScore],
    test_scores: list[UserScore],
    method: str,
    params: DetectorParams | None = None,
) -> list[DetectorVerdict]:
    """Fit `method` on benign training summaries, score the test summaries."""
    params = params or DetectorParams()
    for s in train_scores:
        if s.label is not Label.BENIGN:
            raise ValueError(f"training summary for {s.user} is not benign")
    if not test_scores:
        return []
    train_x = _summary_matrix(train_scores, params.summary_mode)
    test_x = _summary_matrix(test_scores, params.summary_mode)

    if method == "ocsvm":
        model = ocsvm_fit(train_x, nu=params.nu, gamma=params.gamma)
        raw = ocsvm_score(model, test_x)
        threshold = 0.0
    elif method == "lof":
        k = min(params.lof_k, len(train_scores) - 1)
        model = lof_fit(train_x, k=k)
        raw = lof_score(model, test_x)
        threshold = params.lof_threshold
    elif method == "iforest":
        psi = min(params.subsample, len(train_scores))
        model = iforest_fit(train_x, n_trees=params.n_trees, psi=psi, seed=params.seed)
        raw = iforest_score(model, test_x)
        threshold = params.iforest_threshold
    else:
        raise UnknownMethod(f"method {method!r} not one of {METHODS}")

    return [
        DetectorVerdict(
            s.user,
            method,
            float(r),
            Label.MALICIOUS if r > threshold else Label.BENIGN,
            s.label,
        )
        for s, r in zip(test_scores, raw)
    ]


def write_verdicts(verdicts: list[DetectorVerdict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "method", "raw_score", "predicted", "label"])
        for v in sorted(verdicts, key=lambda v: v.user):
            writer.writerow(
                [v.user, v.method, f"{v.raw_score:.17g}", v.predicted.name.lower(), v.label.name.lower()]
            )


def read_verdicts(path: str | Path) -> list[DetectorVerdict]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                DetectorVerdict(
                    row["user"],
                    row["method"],
                    float(row["raw_score"]),
                    Label[row["predicted"].upper()],
                    Label[row["label"].upper()],
                )
            )
    return out
