"""Stratified test sets, detection metrics, and report emission.

Malicious is the positive class everywhere. AUROC comes from the raw
detector scores via the rank statistic (midranks for ties), never from the
thresholded verdicts.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detectors import DetectorVerdict
from .errors import InsufficientUsers
from .ubs import Label


@dataclass(frozen=True)
class TestSetSpec:
    name: str
    # source dataset id -> (benign count, malicious count)
    per_source: dict[str, tuple[int, int]]


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}

    @classmethod
    def from_verdicts(cls, verdicts: list[DetectorVerdict]) -> "ConfusionMatrix":
        cm = cls()
        for v in verdicts:
            actual_pos = v.label is Label.MALICIOUS
            predicted_pos = v.predicted is Label.MALICIOUS
            if actual_pos and predicted_pos:
                cm.tp += 1
            elif actual_pos:
                cm.fn += 1
            elif predicted_pos:
                cm.fp += 1
            else:
                cm.tn += 1
        return cm


@dataclass
class MetricsReport:
    model: str
    detector: str
    test_set: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    auroc: float | None
    fnr: float
    fpr: float
    confusion: ConfusionMatrix

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "detector": self.detector,
            "test_set": self.test_set,
            "metrics": {
                "accuracy": self.accuracy,
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
                "auroc": self.auroc,
                "fnr": self.fnr,
                "fpr": self.fpr,
            },
            "confusion": self.confusion.as_dict(),
        }


# -- test-set construction ------------------------------------------------


def build_test_sets(
    pools: dict[str, list[tuple[str, Label]]],
    specs: list[TestSetSpec],
    seed: int,
    exclude: frozenset[str] | set[str] = frozenset(),
) -> dict[str, list[tuple[str, str, Label]]]:
    """Sample disjoint stratified test sets from per-source user pools.

    Sampling is without replacement per (source, label) stratum; users picked
    for one set leave the pool, so all returned sets are pairwise disjoint
    and disjoint from `exclude` (the training roster). Same seed, same
    membership.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    remaining: dict[str, dict[Label, list[str]]] = {}
    for source in sorted(pools):
        strata: dict[Label, list[str]] = {Label.BENIGN: [], Label.MALICIOUS: []}
        for user, label in pools[source]:
            if user in exclude:
                continue
            strata[label].append(user)
        remaining[source] = {lbl: sorted(users) for lbl, users in strata.items()}

    out: dict[str, list[tuple[str, str, Label]]] = {}
    for spec in specs:
        members: list[tuple[str, str, Label]] = []
        for source in sorted(spec.per_source):
            if source not in remaining:
                raise InsufficientUsers(f"{spec.name}: unknown source {source!r}")
            n_benign, n_malicious = spec.per_source[source]
            for label, count in ((Label.BENIGN, n_benign), (Label.MALICIOUS, n_malicious)):
                pool = remaining[source][label]
                if count > len(pool):
                    raise InsufficientUsers(
                        f"{spec.name}: need {count} {label.name.lower()} users from "
                        f"{source}, pool has {len(pool)}"
                    )
                picked_idx = rng.choice(len(pool), size=count, replace=False)
                picked = sorted(pool[i] for i in picked_idx)
                members.extend((user, source, label) for user in picked)
                remaining[source][label] = [u for u in pool if u not in set(picked)]
        out[spec.name] = members
    return out


# -- metrics ----------------------------------------------------------------


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc_from_scores(scores: np.ndarray, positive: np.ndarray) -> float | None:
    """Mann-Whitney AUROC with midranks; None when one class is absent."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _midranks(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def compute_metrics(
    verdicts: list[DetectorVerdict],
    model: str = "",
    detector: str = "",
    test_set: str = "",
) -> MetricsReport:
    cm = ConfusionMatrix.from_verdicts(verdicts)
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    scores = np.array([v.raw_score for v in verdicts])
    positive = np.array([v.label is Label.MALICIOUS for v in verdicts])
    return MetricsReport(
        model=model,
        detector=detector,
        test_set=test_set,
        accuracy=_ratio(cm.tp + cm.tn, cm.total),
        precision=precision,
        recall=recall,
        f1=f1,
        auroc=auroc_from_scores(scores, positive) if len(verdicts) else None,
        fnr=_ratio(cm.fn, cm.fn + cm.tp),
        fpr=_ratio(cm.fp, cm.fp + cm.tn),
        confusion=cm,
    )


def roc_points(scores: np.ndarray, positive: np.ndarray) -> list[tuple[float, float, float]]:
    """(threshold, fpr, tpr) triples, thresholds descending from +inf.

    A point is predicted positive when score > threshold, so the curve runs
    from (0, 0) at +inf to (1, 1) at -inf.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = max(int(positive.sum()), 1)
    n_neg = max(int((~positive).sum()), 1)
    # at threshold s_i (descending) the predicted-positive set is every score
    # strictly above s_i, so the largest unique score duplicates the +inf point
    uniq = sorted(set(scores.tolist()), reverse=True)
    thresholds = [np.inf, *uniq[1:], -np.inf]
    points = []
    for t in thresholds:
        predicted = scores > t
        tpr = int((predicted & positive).sum()) / n_pos
        fpr = int((predicted & ~positive).sum()) / n_neg
        points.append((float(t), fpr, tpr))
    return points


# -- report emission -----------------------------------------------------------


def emit_report(
    reports: list[MetricsReport],
    out_dir: str | Path,
    run_id: str,
    config_hash: str,
) -> Path:
    """Write report.json plus one ROC CSV per report row (if scores given).

    ROC CSVs are written by the caller via `write_roc`; this emits the JSON.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "run_id": run_id,
        "config_hash": config_hash,
        "rows": [r.as_dict() for r in reports],
    }
    path = out_dir / "report.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def load_report(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_roc(verdicts: list[DetectorVerdict], path: str | Path) -> None:
    scores = np.array([v.raw_score for v in verdicts])
    positive = np.array([v.label is Label.MALICIOUS for v in verdicts])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr", "threshold"])
        for threshold, fpr, tpr in roc_points(scores, positive):
            writer.writerow([f"{fpr:.6f}", f"{tpr:.6f}", f"{threshold:.17g}"])
