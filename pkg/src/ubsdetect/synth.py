"""Deterministic generator of CERT-schema activity logs with ground truth.

Benign users work 1-3 weekday sessions inside 08:00-17:59 with Poisson event
counts. Malicious users share that background and add one scenario's worth
of late-night anomalous sessions (>= 3), so the afterhours features separate
the populations by construction. Identical seed, identical bytes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

SCENARIOS = ("usb_exfil", "leak_upload", "mass_email")

BENIGN_DOMAINS = [
    "www.google.com", "www.cnn.com", "mail.yahoo.com", "www.wikipedia.org",
    "www.weather.com", "stackoverflow.com", "www.nytimes.com", "www.espn.com",
    "docs.internal.dtaa.com", "portal.dtaa.com",
]
LEAK_DOMAINS = ["wikileaks.org", "freeleaks.net", "pastebin.com"]
EXTERNAL_MAIL = ["gmail.com", "yahoo.com", "hotmail.com", "protonmail.com"]
FILE_EXTS = [".docx", ".pdf", ".txt", ".xlsx"]


@dataclass
class SynthConfig:
    seed: int = 42
    n_benign: int = 100
    n_malicious: int = 10
    n_days: int = 60
    start_date: date = date(2010, 1, 4)  # a Monday
    internal_domain: str = "dtaa.com"
    # benign per-session Poisson rates
    http_rate: float = 12.0
    email_rate: float = 3.0
    file_rate: float = 1.2
    device_prob: float = 0.25
    # malicious scenario intensity
    min_anomalous_sessions: int = 3
    max_anomalous_sessions: int = 6


@dataclass
class _Event:
    ts: datetime
    file: str  # logon | device | file | http | email
    row: list[str] = field(default_factory=list)


class _Emitter:
    def __init__(self):
        self.events: list[_Event] = []
        self.counter = 0

    def _next_id(self) -> str:
        self.counter += 1
        return f"{{E{self.counter:08d}}}"

    def logon(self, ts, user, pc, activity):
        self.events.append(_Event(ts, "logon", [self._next_id(), _fmt(ts), user, pc, activity]))

    def device(self, ts, user, pc, activity):
        self.events.append(_Event(ts, "device", [self._next_id(), _fmt(ts), user, pc, activity]))

    def file(self, ts, user, pc, filename):
        self.events.append(
            _Event(ts, "file", [self._next_id(), _fmt(ts), user, pc, filename, "file contents"])
        )

    def http(self, ts, user, pc, url):
        self.events.append(_Event(ts, "http", [self._next_id(), _fmt(ts), user, pc, url]))

    def email(self, ts, user, pc, to, size, attachments):
        self.events.append(
            _Event(
                ts,
                "email",
                [
                    self._next_id(), _fmt(ts), user, pc,
                    to, "", "", f"{user}@dtaa.com", str(size), str(attachments),
                    "email body",
                ],
            )
        )


def _fmt(ts: datetime) -> str:
    return ts.strftime("%m/%d/%Y %H:%M:%S")


def _workdays(config: SynthConfig) -> list[date]:
    days = []
    for i in range(config.n_days):
        day = config.start_date + timedelta(days=i)
        if day.weekday() < 5:
            days.append(day)
    return days


def _minute(day: date, hour: int, minute: int) -> datetime:
    return datetime(day.year, day.month, day.day, hour, minute)


def _session_events(
    em: _Emitter,
    rng: np.random.Generator,
    config: SynthConfig,
    user: str,
    pc: str,
    start: datetime,
    end: datetime,
):
    """Benign working-session body between a logon and a logoff."""
    em.logon(start, user, pc, "Logon")
    em.logon(end, user, pc, "Logoff")
    span = max(int((end - start).total_seconds() // 60) - 2, 1)

    def when() -> datetime:
        return start + timedelta(minutes=int(rng.integers(1, span + 1)))

    for _ in range(rng.poisson(config.http_rate)):
        domain = BENIGN_DOMAINS[rng.integers(len(BENIGN_DOMAINS))]
        em.http(when(), user, pc, f"http://{domain}/page{rng.integers(1000)}")
    for _ in range(rng.poisson(config.email_rate)):
        n_to = int(rng.integers(1, 4))
        to = ";".join(f"emp{rng.integers(1, 400):04d}@{config.internal_domain}" for _ in range(n_to))
        em.email(when(), user, pc, to, int(rng.lognormal(9.5, 1.0)), int(rng.integers(0, 2)))
    for _ in range(rng.poisson(config.file_rate)):
        ext = FILE_EXTS[rng.integers(len(FILE_EXTS))]
        em.file(when(), user, pc, f"report_{rng.integers(10000)}{ext}")
    if rng.random() < config.device_prob:
        t0 = when()
        em.device(t0, user, pc, "Connect")
        t1 = min(t0 + timedelta(minutes=int(rng.integers(5, 30))), end - timedelta(minutes=1))
        em.device(max(t1, t0), user, pc, "Disconnect")


def _benign_days(em, rng, config, user, pc):
    for day in _workdays(config):
        if rng.random() < 0.1:  # day off
            continue
        n_sessions = int(rng.integers(1, 4))
        # split the workday into up to 3 non-overlapping windows
        bounds = [(8, 12), (12, 15), (15, 18)][:n_sessions]
        for lo, hi in bounds:
            start = _minute(day, lo, int(rng.integers(0, 50)))
            end = _minute(day, hi - 1, int(rng.integers(10, 60)))
            if end <= start:
                end = start + timedelta(minutes=30)
            _session_events(em, rng, config, user, pc, start, end)


def _night_window(rng, day: date) -> tuple[datetime, datetime]:
    start = _minute(day, 22, int(rng.integers(0, 40)))
    end = min(start + timedelta(minutes=int(rng.integers(45, 90))), _minute(day, 23, 50))
    return start, end


def _scenario_days(rng, config) -> list[date]:
    days = _workdays(config)
    n = int(rng.integers(config.min_anomalous_sessions, config.max_anomalous_sessions + 1))
    n = min(n, len(days))
    picked = rng.choice(len(days), size=n, replace=False)
    return [days[i] for i in sorted(picked)]


def _malicious_days(em, rng, config, user, pc, scenario: str):
    _benign_days(em, rng, config, user, pc)
    for day in _scenario_days(rng, config):
        start, end = _night_window(rng, day)
        em.logon(start, user, pc, "Logon")
        em.logon(end, user, pc, "Logoff")
        span = max(int((end - start).total_seconds() // 60) - 2, 1)

        def when() -> datetime:
            return start + timedelta(minutes=int(rng.integers(1, span + 1)))

        if scenario == "usb_exfil":
            t0 = start + timedelta(minutes=1)
            em.device(t0, user, pc, "Connect")
            for _ in range(int(rng.integers(8, 21))):
                em.file(when(), user, pc, f"archive_{rng.integers(10000)}.zip")
            em.device(end - timedelta(minutes=1), user, pc, "Disconnect")
        elif scenario == "leak_upload":
            for _ in range(int(rng.integers(10, 26))):
                domain = LEAK_DOMAINS[rng.integers(len(LEAK_DOMAINS))]
                em.http(when(), user, pc, f"http://{domain}/upload{rng.integers(1000)}")
        elif scenario == "mass_email":
            for _ in range(int(rng.integers(5, 13))):
                n_to = int(rng.integers(3, 8))
                to = ";".join(
                    f"contact{rng.integers(1000):03d}@{EXTERNAL_MAIL[rng.integers(len(EXTERNAL_MAIL))]}"
                    for _ in range(n_to)
                )
                em.email(when(), user, pc, to, int(rng.lognormal(13.0, 0.5)), int(rng.integers(2, 6)))


HEADERS = {
    "logon": ["id", "date", "user", "pc", "activity"],
    "device": ["id", "date", "user", "pc", "activity"],
    "file": ["id", "date", "user", "pc", "filename", "content"],
    "http": ["id", "date", "user", "pc", "url"],
    "email": ["id", "date", "user", "pc", "to", "cc", "bcc", "from", "size", "attachments", "content"],
}


def generate(config: SynthConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write the five activity CSVs plus labels.csv; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    em = _Emitter()

    labels: list[tuple[str, str]] = []
    for i in range(config.n_benign):
        user = f"EMP{i:04d}"
        _benign_days(em, rng, config, user, f"PC-{i:04d}")
        labels.append((user, "benign"))
    for j in range(config.n_malicious):
        idx = config.n_benign + j
        user = f"EMP{idx:04d}"
        scenario = SCENARIOS[j % len(SCENARIOS)]
        _malicious_days(em, rng, config, user, f"PC-{idx:04d}", scenario)
        labels.append((user, "malicious"))

    em.events.sort(key=lambda e: (e.ts, e.row[0]))
    paths: dict[str, Path] = {}
    for ftype, header in HEADERS.items():
        path = out_dir / f"{ftype}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for ev in em.events:
                if ev.file == ftype:
                    writer.writerow(ev.row)
        paths[ftype] = path

    labels_path = out_dir / "labels.csv"
    with open(labels_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "label"])
        for user, label in labels:
            writer.writerow([user, label])
    paths["labels"] = labels_path
    return paths


def read_labels(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["user"]] = row["label"]
    return out
