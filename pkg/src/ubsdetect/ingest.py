"""Activity-log ingestion: CSV parsing, sessionization, session features.

Input files follow the five known comma-separated schemas (logon, device,
file, http, email) with `MM/DD/YYYY HH:MM:SS` timestamps. Events are grouped
into per-(user, pc) logon-to-logoff sessions, split at midnight, ordered per
(user, day), merged into the last slot when a day overflows S sessions, and
encoded as 35-value feature vectors in `schema.FEATURES` order.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from enum import Enum
from pathlib import Path

import numpy as np

from . import schema
from .errors import ExcessiveMalformedRows, UnknownSchema

log = logging.getLogger(__name__)

TS_FORMAT = "%m/%d/%Y %H:%M:%S"

MALFORMED_TOLERANCE = 0.01


class EventKind(Enum):
    LOGON = "Logon"
    LOGOFF = "Logoff"
    DEVICE_CONNECT = "DeviceConnect"
    DEVICE_DISCONNECT = "DeviceDisconnect"
    FILE_COPY = "FileCopy"
    HTTP = "Http"
    EMAIL = "Email"


# same-timestamp tiebreak: a Logon opens before other events land, a Logoff
# closes after they land
_KIND_ORDER = {
    EventKind.LOGON: 0,
    EventKind.DEVICE_CONNECT: 1,
    EventKind.DEVICE_DISCONNECT: 2,
    EventKind.FILE_COPY: 3,
    EventKind.HTTP: 4,
    EventKind.EMAIL: 5,
    EventKind.LOGOFF: 6,
}

_SCHEMAS = {
    ("id", "date", "user", "pc", "activity"): None,  # logon or device, split on activity value
    ("id", "date", "user", "pc", "filename", "content"): "file",
    ("id", "date", "user", "pc", "url"): "http",
    ("id", "date", "user", "pc", "to", "cc", "bcc", "from", "size", "attachments", "content"): "email",
}


@dataclass(frozen=True)
class RawEvent:
    kind: EventKind
    timestamp: datetime
    user: str
    pc: str
    event_id: str
    payload: dict[str, str] = field(default_factory=dict)


@dataclass
class SessionRecord:
    user: str
    day_index: int
    session_index: int
    start: datetime
    end: datetime
    features: np.ndarray  # float64, length schema.F

    def __post_init__(self):
        assert len(self.features) == schema.F
        assert self.start <= self.end


@dataclass
class ParseStats:
    rows_total: int = 0
    rows_malformed: int = 0
    rows_out_of_window: int = 0
    events: int = 0

    def as_dict(self) -> dict:
        return {
            "rows_total": self.rows_total,
            "rows_malformed": self.rows_malformed,
            "rows_out_of_window": self.rows_out_of_window,
            "events": self.events,
        }


@dataclass
class IngestConfig:
    window_start: date
    n_days: int
    max_sessions_per_day: int = 9
    internal_domain: str = "dtaa.com"
    url_categories_path: str | None = None
    malformed_tolerance: float = MALFORMED_TOLERANCE


# -- parsing ----------------------------------------------------------------


def _classify_header(header: list[str]) -> str:
    key = tuple(h.strip().lower() for h in header)
    # email files in the wild sometimes label the attachment column differently
    key = tuple("attachments" if h in ("#att", "attachment", "attachments") else h for h in key)
    if key == ("id", "date", "user", "pc", "activity"):
        return "logon_or_device"
    kind = _SCHEMAS.get(key)
    if kind is None:
        raise UnknownSchema(f"unrecognized header: {header!r}")
    return kind


def _row_to_event(ftype: str, row: dict[str, str], event_window: tuple[datetime, datetime]) -> RawEvent | str:
    """Map one CSV row to a RawEvent.

    Returns the string "out_of_window" for valid rows outside the window;
    raises ValueError for malformed rows.
    """
    ts = datetime.strptime(row["date"].strip(), TS_FORMAT)
    # user ids may carry a domain prefix ("DTAA/AAM0658" -> "AAM0658")
    user = row["user"].strip().split("/")[-1]
    pc = row["pc"].strip()
    if not user or not pc:
        raise ValueError("missing user or pc")
    if not (event_window[0] <= ts < event_window[1]):
        return "out_of_window"
    event_id = row.get("id", "").strip()

    if ftype == "logon_or_device":
        activity = row["activity"].strip().lower()
        kind = {
            "logon": EventKind.LOGON,
            "logoff": EventKind.LOGOFF,
            "connect": EventKind.DEVICE_CONNECT,
            "disconnect": EventKind.DEVICE_DISCONNECT,
        }.get(activity)
        if kind is None:
            raise ValueError(f"unknown activity {activity!r}")
        return RawEvent(kind, ts, user, pc, event_id)
    if ftype == "file":
        return RawEvent(EventKind.FILE_COPY, ts, user, pc, event_id, {"filename": row.get("filename", "")})
    if ftype == "http":
        return RawEvent(EventKind.HTTP, ts, user, pc, event_id, {"url": row.get("url", "")})
    if ftype == "email":
        payload = {k: row.get(k, "") for k in ("to", "cc", "bcc", "from", "size", "attachments")}
        return RawEvent(EventKind.EMAIL, ts, user, pc, event_id, payload)
    raise ValueError(f"unhandled file type {ftype}")


def parse_logs(paths: list[str | Path], config: IngestConfig) -> tuple[list[RawEvent], ParseStats]:
    """Parse CSV activity logs into events sorted by (user, timestamp).

    Malformed rows (bad timestamp, missing user/pc, unknown activity) are
    counted and skipped; the run fails with ExcessiveMalformedRows when they
    exceed `config.malformed_tolerance` of all rows. Rows outside the
    observation window are dropped with a counter.
    """
    window = (
        datetime.combine(config.window_start, datetime.min.time()),
        datetime.combine(config.window_start + timedelta(days=config.n_days), datetime.min.time()),
    )
    stats = ParseStats()
    events: list[RawEvent] = []
    for path in paths:
        path = Path(path)
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise UnknownSchema(f"{path}: empty file, no header")
            ftype = _classify_header(header)
            cols = [h.strip().lower() for h in header]
            cols = ["attachments" if c in ("#att", "attachment") else c for c in cols]
            for row in reader:
                if not row:
                    continue
                stats.rows_total += 1
                if len(row) != len(cols):
                    stats.rows_malformed += 1
                    log.debug("%s: wrong column count in row %r", path.name, row[:2])
                    continue
                try:
                    result = _row_to_event(ftype, dict(zip(cols, row)), window)
                except ValueError as exc:
                    stats.rows_malformed += 1
                    log.debug("%s: malformed row %r (%s)", path.name, row[:2], exc)
                    continue
                if result == "out_of_window":
                    stats.rows_out_of_window += 1
                    continue
                events.append(result)
    if stats.rows_total and stats.rows_malformed / stats.rows_total > config.malformed_tolerance:
        raise ExcessiveMalformedRows(
            f"{stats.rows_malformed}/{stats.rows_total} rows malformed "
            f"(tolerance {config.malformed_tolerance:.0%})"
        )
    stats.events = len(events)
    events.sort(key=lambda e: (e.user, e.timestamp, _KIND_ORDER[e.kind], e.event_id))
    return events, stats


# -- sessionization -----------------------------------------------------------


@dataclass
class _Session:
    """Pre-feature session: an event group with time bounds."""

    user: str
    start: datetime
    end: datetime
    events: list[RawEvent]
    orphan: bool = False


def sessionize(user_events: list[RawEvent]) -> list[_Session]:
    """Group one user's time-ordered events into per-(user, pc) sessions.

    A Logon opens a session on its pc, the matching Logoff closes it.
    Sessionless events open a synthetic orphan session; a Logon arriving over
    an open session force-closes the old one at Logon minus 1 minute. No event
    is ever dropped.
    """
    if not user_events:
        return []
    user = user_events[0].user
    open_real: dict[str, _Session] = {}
    open_synth: dict[str, _Session] = {}
    out: list[_Session] = []

    def close(sess: _Session, end: datetime, orphan: bool) -> None:
        sess.end = max(sess.start, end)
        sess.orphan = sess.orphan or orphan
        out.append(sess)

    for ev in user_events:
        pc = ev.pc
        if ev.kind is EventKind.LOGON:
            if pc in open_synth:
                sess = open_synth.pop(pc)
                close(sess, max(e.timestamp for e in sess.events), True)
            if pc in open_real:
                close(open_real.pop(pc), ev.timestamp - timedelta(minutes=1), True)
            open_real[pc] = _Session(user, ev.timestamp, ev.timestamp, [ev])
        elif ev.kind is EventKind.LOGOFF:
            if pc in open_real:
                sess = open_real.pop(pc)
                sess.events.append(ev)
                close(sess, ev.timestamp, False)
            elif pc in open_synth:
                sess = open_synth.pop(pc)
                sess.events.append(ev)
                close(sess, ev.timestamp, True)
            else:
                out.append(_Session(user, ev.timestamp, ev.timestamp, [ev], orphan=True))
        else:
            if pc in open_real:
                open_real[pc].events.append(ev)
            elif pc in open_synth:
                open_synth[pc].events.append(ev)
            else:
                open_synth[pc] = _Session(user, ev.timestamp, ev.timestamp, [ev], orphan=True)
    for sess in list(open_real.values()) + list(open_synth.values()):
        close(sess, max(e.timestamp for e in sess.events), True)
    out.sort(key=lambda s: (s.start, s.end))
    return out


def _split_at_midnight(sess: _Session) -> list[_Session]:
    """Split a session so no part spans two calendar days; empty parts drop."""
    if sess.start.date() == sess.end.date():
        return [sess]
    parts: list[_Session] = []
    day = sess.start.date()
    while day <= sess.end.date():
        day_start = datetime.combine(day, datetime.min.time())
        day_end = day_start + timedelta(days=1)
        evs = [e for e in sess.events if day_start <= e.timestamp < day_end]
        start = max(sess.start, day_start)
        end = min(sess.end, day_end - timedelta(seconds=1))
        if evs:
            parts.append(_Session(sess.user, start, end, evs, sess.orphan))
        day += timedelta(days=1)
    return parts


def _merge(sessions: list[_Session]) -> _Session:
    events = [e for s in sessions for e in s.events]
    return _Session(
        sessions[0].user,
        sessions[0].start,
        max(s.end for s in sessions),
        events,
        any(s.orphan for s in sessions),
    )


# -- features -----------------------------------------------------------------


def _is_afterhours(ts: datetime) -> bool:
    return ts.hour < 8 or ts.hour >= 18


def _domain(url: str) -> str:
    url = url.strip().lower()
    for prefix in ("http://", "https://"):
        if url.startswith(prefix):
            url = url[len(prefix):]
            break
    return url.split("/", 1)[0]


def _recipients(payload: dict[str, str]) -> list[str]:
    addrs = []
    for fieldname in ("to", "cc", "bcc"):
        for addr in payload.get(fieldname, "").split(";"):
            addr = addr.strip().lower()
            if addr:
                addrs.append(addr)
    return addrs


def _int_or_zero(value: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        return 0


def extract_features(
    sess: _Session,
    session_index: int,
    primary_pc: str,
    prev_end: datetime | None,
    config: IngestConfig,
    url_cats: dict[str, list[str]],
) -> np.ndarray:
    """Encode one session as the 35-value feature vector (raw, unnormalized)."""
    f = np.zeros(schema.F, dtype=np.float64)
    evs = sess.events
    assert evs, "session must hold at least one event"

    f[schema.IDX["start_hour"]] = sess.start.hour / 23.0
    f[schema.IDX["end_hour"]] = sess.end.hour / 23.0
    f[schema.IDX["duration_minutes"]] = math.log1p((sess.end - sess.start).total_seconds() / 60.0)
    f[schema.IDX["is_weekend"]] = 1.0 if sess.start.weekday() >= 5 else 0.0
    f[schema.IDX["is_afterhours_start"]] = 1.0 if _is_afterhours(sess.start) else 0.0
    f[schema.IDX["n_distinct_pcs"]] = len({e.pc for e in evs})
    f[schema.IDX["is_nonprimary_pc"]] = 1.0 if any(e.pc != primary_pc for e in evs) else 0.0
    f[schema.IDX["orphan_logon_flag"]] = 1.0 if sess.orphan else 0.0

    domains = set()
    recipients = set()
    email_bytes = 0
    for ev in evs:
        after = _is_afterhours(ev.timestamp)
        kind = ev.kind
        if kind is EventKind.LOGON:
            f[schema.IDX["logon_count"]] += 1
        elif kind is EventKind.LOGOFF:
            f[schema.IDX["logoff_count"]] += 1
        elif kind is EventKind.DEVICE_CONNECT:
            f[schema.IDX["device_connect_count"]] += 1
            if after:
                f[schema.IDX["device_afterhours_connect_count"]] += 1
        elif kind is EventKind.DEVICE_DISCONNECT:
            f[schema.IDX["device_disconnect_count"]] += 1
        elif kind is EventKind.FILE_COPY:
            f[schema.IDX["file_copy_count"]] += 1
            name = ev.payload.get("filename", "").lower()
            if name.endswith(".exe"):
                f[schema.IDX["file_exe_count"]] += 1
            elif name.endswith((".doc", ".docx")):
                f[schema.IDX["file_doc_count"]] += 1
            elif name.endswith(".pdf"):
                f[schema.IDX["file_pdf_count"]] += 1
            elif name.endswith(".zip"):
                f[schema.IDX["file_zip_count"]] += 1
            if after:
                f[schema.IDX["file_afterhours_count"]] += 1
        elif kind is EventKind.HTTP:
            f[schema.IDX["http_count"]] += 1
            url = ev.payload.get("url", "").lower()
            domains.add(_domain(url))
            if any(w in url for w in url_cats["jobsite"]):
                f[schema.IDX["http_jobsite_count"]] += 1
            if any(w in url for w in url_cats["leaksite"]):
                f[schema.IDX["http_leaksite_count"]] += 1
            if any(w in url for w in url_cats["hacktool"]):
                f[schema.IDX["http_hacktool_count"]] += 1
            if after:
                f[schema.IDX["http_afterhours_count"]] += 1
        elif kind is EventKind.EMAIL:
            f[schema.IDX["email_sent_count"]] += 1
            addrs = _recipients(ev.payload)
            internal_suffix = "@" + config.internal_domain.lower()
            f[schema.IDX["email_external_recipient_count"]] += sum(
                1 for a in addrs if not a.endswith(internal_suffix)
            )
            f[schema.IDX["email_internal_recipient_count"]] += sum(
                1 for a in addrs if a.endswith(internal_suffix)
            )
            if _int_or_zero(ev.payload.get("attachments", "0")) > 0:
                f[schema.IDX["email_with_attachment_count"]] += 1
            email_bytes += _int_or_zero(ev.payload.get("size", "0"))
            recipients.update(addrs)
            if after:
                f[schema.IDX["email_afterhours_count"]] += 1

    f[schema.IDX["http_distinct_domains"]] = len(domains)
    f[schema.IDX["email_total_bytes"]] = math.log1p(max(email_bytes, 0))
    f[schema.IDX["email_distinct_recipients"]] = len(recipients)
    f[schema.IDX["total_event_count"]] = len(evs)
    f[schema.IDX["session_slot"]] = session_index / max(config.max_sessions_per_day - 1, 1)
    if prev_end is None:
        gap_minutes = 0.0
    else:
        gap_minutes = max((sess.start - prev_end).total_seconds() / 60.0, 0.0)
    f[schema.IDX["minutes_since_previous"]] = math.log1p(gap_minutes)
    return f


def primary_pc_map(events: list[RawEvent]) -> dict[str, str]:
    """Per user, the pc with the most Logon events (ties: smallest pc id).

    Users with no Logon anywhere fall back to their most frequent event pc.
    """
    logons: dict[str, dict[str, int]] = {}
    any_pc: dict[str, dict[str, int]] = {}
    for ev in events:
        any_pc.setdefault(ev.user, {}).setdefault(ev.pc, 0)
        any_pc[ev.user][ev.pc] += 1
        if ev.kind is EventKind.LOGON:
            logons.setdefault(ev.user, {}).setdefault(ev.pc, 0)
            logons[ev.user][ev.pc] += 1
    result = {}
    for user, counts in any_pc.items():
        source = logons.get(user, counts)
        best = max(sorted(source), key=lambda pc: source[pc])
        result[user] = best
    return result


def build_sessions(events: list[RawEvent], config: IngestConfig) -> list[SessionRecord]:
    """Full sessionization: group, split, order, merge overflow, featurize.

    Events must already be sorted by (user, timestamp); output records are
    sorted by (user, day_index, session_index).
    """
    url_cats = schema.load_url_categories(config.url_categories_path)
    primary = primary_pc_map(events)
    S = config.max_sessions_per_day

    by_user: dict[str, list[RawEvent]] = {}
    for ev in events:
        by_user.setdefault(ev.user, []).append(ev)

    records: list[SessionRecord] = []
    for user in sorted(by_user):
        parts: list[_Session] = []
        for sess in sessionize(by_user[user]):
            parts.extend(_split_at_midnight(sess))
        by_day: dict[int, list[_Session]] = {}
        for part in parts:
            day = (part.start.date() - config.window_start).days
            by_day.setdefault(day, []).append(part)
        prev_end: datetime | None = None
        for day in sorted(by_day):
            day_sessions = sorted(by_day[day], key=lambda s: (s.start, s.end))
            if len(day_sessions) > S:
                day_sessions = day_sessions[: S - 1] + [_merge(day_sessions[S - 1:])]
            for idx, sess in enumerate(day_sessions):
                feats = extract_features(sess, idx, primary[user], prev_end, config, url_cats)
                records.append(SessionRecord(user, day, idx, sess.start, sess.end, feats))
                prev_end = sess.end
    return records


def ingest_logs(paths: list[str | Path], config: IngestConfig) -> tuple[list[SessionRecord], ParseStats]:
    events, stats = parse_logs(paths, config)
    return build_sessions(events, config), stats


# -- session file io ----------------------------------------------------------


def write_sessions(records: list[SessionRecord], path: str | Path) -> None:
    """One record per line, tab-separated, feature values at 6 decimals."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            values = "\t".join(f"{v:.6f}" for v in r.features)
            fh.write(
                f"{r.user}\t{r.day_index}\t{r.session_index}"
                f"\t{r.start.isoformat(timespec='seconds')}\t{r.end.isoformat(timespec='seconds')}"
                f"\t{values}\n"
            )


def read_sessions(path: str | Path) -> list[SessionRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            cells = line.rstrip("\n").split("\t")
            user, day, idx, start, end = cells[:5]
            feats = np.array([float(v) for v in cells[5:]], dtype=np.float64)
            records.append(
                SessionRecord(
                    user,
                    int(day),
                    int(idx),
                    datetime.fromisoformat(start),
                    datetime.fromisoformat(end),
                    feats,
                )
            )
    return records
