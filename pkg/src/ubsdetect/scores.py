"""Per-user reconstruction-error summaries shared by every model.

A UserScore carries the per-session error vector (mask-true slots only, in
(day, session) order) and the 4-statistic summary [mean, max, p95, std] that
detectors consume. The CSV schema is fixed: user,label,mean,max,p95,std,n_sessions.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ubs import Label

SUMMARY_FIELDS = ("mean", "max", "p95", "std")


@dataclass
class UserScore:
    user: str
    label: Label
    errors: np.ndarray  # float64, one entry per mask-true session
    summary: np.ndarray  # float64 [4]: mean, max, p95, std

    @property
    def n_sessions(self) -> int:
        return len(self.errors)


def summarize(errors: np.ndarray) -> np.ndarray:
    errors = np.asarray(errors, dtype=np.float64)
    return np.array(
        [
            errors.mean(),
            errors.max(),
            float(np.percentile(errors, 95)),
            errors.std(),
        ]
    )


def make_score(user: str, label: Label, errors: np.ndarray) -> UserScore:
    return UserScore(user, label, np.asarray(errors, dtype=np.float64), summarize(errors))


def write_scores(scores: list[UserScore], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "label", *SUMMARY_FIELDS, "n_sessions"])
        for s in sorted(scores, key=lambda s: s.user):
            writer.writerow(
                [s.user, s.label.name.lower()]
                + [f"{v:.17g}" for v in s.summary]
                + [s.n_sessions]
            )


def read_scores(path: str | Path) -> list[UserScore]:
    """Read summaries back; per-session error vectors are not stored in CSV."""
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            summary = np.array([float(row[k]) for k in SUMMARY_FIELDS])
            score = UserScore(
                row["user"],
                Label[row["label"].upper()],
                np.zeros(int(row["n_sessions"])),
                summary,
            )
            out.append(score)
    return out
