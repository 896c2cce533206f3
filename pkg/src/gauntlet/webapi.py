"""Permission-probe reports and the API-exposure assessment.

The probe page asks the client for a fixed set of capabilities and posts
one status per API. Stock webviews auto-grant the motion/battery trio
without asking, which is the fingerprint this module recognizes.
"""

from __future__ import annotations

from dataclasses import dataclass

PROBE_APIS = (
    "geolocation",
    "camera",
    "microphone",
    "battery",
    "accelerometer",
    "magnetometer",
    "gyroscope",
    "clipboard-read",
    "notifications",
    "persistent-storage",
)

PROBE_STATUSES = ("granted", "denied", "prompt", "unsupported")

# Sensor/battery APIs exposed without any user interaction by default
# webview configurations.
WEBVIEW_DEFAULT_GRANTS = frozenset({"accelerometer", "magnetometer", "battery"})


@dataclass(frozen=True)
class ProbeReport:
    page_url: str
    apis: tuple[tuple[str, str], ...]   # (api, status), report order kept
    ts: int

    def status_of(self, api: str) -> str | None:
        for name, status in self.apis:
            if name == api:
                return status
        return None

    @property
    def granted(self) -> frozenset[str]:
        return frozenset(n for n, s in self.apis if s == "granted")

    @property
    def prompted(self) -> frozenset[str]:
        return frozenset(n for n, s in self.apis if s == "prompt")

    def to_json(self) -> dict:
        return {"page_url": self.page_url, "apis": dict(self.apis), "ts": self.ts}


def validate_probe_report(obj) -> ProbeReport:
    if not isinstance(obj, dict):
        raise ValueError("probe report must be an object")
    page_url = obj.get("page_url")
    if not isinstance(page_url, str) or not page_url:
        raise ValueError("page_url must be a non-empty string")
    ts = obj.get("ts")
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise ValueError("ts must be an integer")
    apis = obj.get("apis")
    if not isinstance(apis, dict) or not apis:
        raise ValueError("apis must be a non-empty object")
    pairs = []
    for name, status in apis.items():
        if not isinstance(name, str) or not name:
            raise ValueError("api names must be strings")
        if status not in PROBE_STATUSES:
            raise ValueError(f"apis[{name!r}] must be one of {PROBE_STATUSES}")
        pairs.append((name, status))
    return ProbeReport(page_url=page_url, apis=tuple(pairs), ts=ts)


@dataclass(frozen=True)
class WebApiAssessment:
    posture: str                 # webview_default | prompting | fully_blocking | permissive | unknown
    granted: frozenset[str]
    prompted: frozenset[str]
    blocking_credit: bool

    def to_json(self) -> dict:
        return {
            "posture": self.posture,
            "granted": sorted(self.granted),
            "prompted": sorted(self.prompted),
            "blocking_credit": self.blocking_credit,
        }


def assess(report: ProbeReport | None, credit_enabled: bool = True) -> WebApiAssessment:
    """Classify a probe report; no report at all stays 'unknown'."""
    if report is None:
        return WebApiAssessment("unknown", frozenset(), frozenset(), False)
    granted = report.granted
    prompted = report.prompted
    if granted == WEBVIEW_DEFAULT_GRANTS and not prompted:
        posture = "webview_default"
    elif not granted and prompted:
        posture = "prompting"
    elif not granted and not prompted:
        posture = "fully_blocking"
    else:
        posture = "permissive"
    credit = credit_enabled and granted <= WEBVIEW_DEFAULT_GRANTS
    return WebApiAssessment(posture, granted, prompted, credit)
