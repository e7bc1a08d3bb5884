"""Fixed 35-slot session feature schema.

The feature vector layout is versioned: order and names are frozen, every
session record carries exactly these 35 values in this order. Counts are
stored raw (non-negative integers as floats); z-scoring happens later, when
tensors are normalized.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

F = 35

SCHEMA_VERSION = 1

# value kinds
COUNT = "count"
FLAG = "flag"
NORMALIZED = "normalized"
LOG_SCALED = "log-scaled"


@dataclass(frozen=True)
class FeatureSpec:
    index: int
    name: str
    kind: str
    rule: str


FEATURES: tuple[FeatureSpec, ...] = (
    FeatureSpec(0, "start_hour", NORMALIZED, "session start hour / 23"),
    FeatureSpec(1, "end_hour", NORMALIZED, "session end hour / 23"),
    FeatureSpec(2, "duration_minutes", LOG_SCALED, "log1p(end - start in minutes)"),
    FeatureSpec(3, "is_weekend", FLAG, "session starts on Saturday or Sunday"),
    FeatureSpec(4, "is_afterhours_start", FLAG, "start before 08:00 or after 17:59"),
    FeatureSpec(5, "n_distinct_pcs", COUNT, "distinct pcs among session events"),
    FeatureSpec(6, "is_nonprimary_pc", FLAG, "any event pc differs from the user's primary pc"),
    FeatureSpec(7, "logon_count", COUNT, "Logon events in session"),
    FeatureSpec(8, "logoff_count", COUNT, "Logoff events in session"),
    FeatureSpec(9, "orphan_logon_flag", FLAG, "session was closed without a matching Logoff"),
    FeatureSpec(10, "device_connect_count", COUNT, "device Connect events"),
    FeatureSpec(11, "device_disconnect_count", COUNT, "device Disconnect events"),
    FeatureSpec(12, "device_afterhours_connect_count", COUNT, "device Connects in the afterhours window"),
    FeatureSpec(13, "file_copy_count", COUNT, "file events"),
    FeatureSpec(14, "file_exe_count", COUNT, "file events with .exe filename"),
    FeatureSpec(15, "file_doc_count", COUNT, "file events with .doc/.docx filename"),
    FeatureSpec(16, "file_pdf_count", COUNT, "file events with .pdf filename"),
    FeatureSpec(17, "file_zip_count", COUNT, "file events with .zip filename"),
    FeatureSpec(18, "file_afterhours_count", COUNT, "file events in the afterhours window"),
    FeatureSpec(19, "http_count", COUNT, "http events"),
    FeatureSpec(20, "http_distinct_domains", COUNT, "distinct url domains"),
    FeatureSpec(21, "http_jobsite_count", COUNT, "urls matching job-site keywords"),
    FeatureSpec(22, "http_leaksite_count", COUNT, "urls matching leak-site keywords"),
    FeatureSpec(23, "http_hacktool_count", COUNT, "urls matching hacking-tool keywords"),
    FeatureSpec(24, "http_afterhours_count", COUNT, "http events in the afterhours window"),
    FeatureSpec(25, "email_sent_count", COUNT, "email events"),
    FeatureSpec(26, "email_external_recipient_count", COUNT, "recipients outside the internal domain"),
    FeatureSpec(27, "email_internal_recipient_count", COUNT, "recipients inside the internal domain"),
    FeatureSpec(28, "email_with_attachment_count", COUNT, "emails with at least one attachment"),
    FeatureSpec(29, "email_total_bytes", LOG_SCALED, "log1p(sum of email sizes in bytes)"),
    FeatureSpec(30, "email_distinct_recipients", COUNT, "distinct recipient addresses"),
    FeatureSpec(31, "email_afterhours_count", COUNT, "email events in the afterhours window"),
    FeatureSpec(32, "total_event_count", COUNT, "all events in session, logon/logoff included"),
    FeatureSpec(33, "session_slot", NORMALIZED, "session_index / (S - 1)"),
    FeatureSpec(34, "minutes_since_previous", LOG_SCALED, "log1p(minutes since the user's previous session end)"),
)

# name -> index lookup used by tests and detectors
IDX = {spec.name: spec.index for spec in FEATURES}

# indices of features whose per-day sums must equal raw event counts
CONSERVED_COUNTS = (
    "logon_count",
    "logoff_count",
    "device_connect_count",
    "device_disconnect_count",
    "file_copy_count",
    "http_count",
    "email_sent_count",
    "total_event_count",
)

assert len(FEATURES) == F
assert len(IDX) == F, "feature names must be unique"
assert [spec.index for spec in FEATURES] == list(range(F))


def feature_names() -> list[str]:
    return [spec.name for spec in FEATURES]


def load_url_categories(path: str | None = None) -> dict[str, list[str]]:
    """Load URL keyword categories (jobsite / leaksite / hacktool).

    Without a path, the packaged default keyword lists are used. Keywords are
    matched case-insensitively as substrings of the full URL.
    """
    if path is None:
        text = resources.files("ubsdetect.data").joinpath("url_categories.json").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    cats = json.loads(text)
    for key in ("jobsite", "leaksite", "hacktool"):
        if key not in cats or not isinstance(cats[key], list):
            raise ValueError(f"url category file missing list for {key!r}")
    return {k: [str(w).lower() for w in v] for k, v in cats.items()}
