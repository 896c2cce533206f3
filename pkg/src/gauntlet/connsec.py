"""Connection-security posture recovered from captured traffic.

Four independent observations: which scheme the client reaches for when
the page works on both, whether it proceeds past an unverifiable server
certificate, what it does with plain-http subresources on an https page,
and whether its TLS stack still offers long-broken ciphers. Encrypted
DNS use is reported alongside since it changes what the flow log can see.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from urllib.parse import urlsplit

from .flows import CapturedFlow
from .sites import BARE_HOST, MIXED_HOST, MIXED_SUBRESOURCES

MIXED_ALLOWED = "allowed"
MIXED_UPGRADED = "upgraded"
MIXED_BLOCKED = "blocked"
MIXED_NOT_TESTED = "not_tested"


def _load_json(name: str) -> dict:
    return json.loads((resources.files("gauntlet.data") / name).read_text("utf-8"))


def load_rc4_suites() -> dict[str, str]:
    """IANA code point -> suite name, RC4 family only."""
    return _load_json("rc4_suites.json")["suites"]


def load_doh_registry() -> dict:
    return _load_json("doh_endpoints.json")


@dataclass(frozen=True)
class ConnSecReport:
    default_protocol: str | None        # scheme first used against the dual-scheme host
    accepts_untrusted_cert: bool | None  # None when the untrusted pass saw no TLS attempt
    mixed_content: str
    rc4_offered: bool
    weak_suites_offered: tuple[str, ...]
    doh_contacted: tuple[str, ...]
    dot_attempted: bool

    def to_json(self) -> dict:
        return {
            "default_protocol": self.default_protocol,
            "accepts_untrusted_cert": self.accepts_untrusted_cert,
            "mixed_content": self.mixed_content,
            "rc4_offered": self.rc4_offered,
            "weak_suites_offered": list(self.weak_suites_offered),
            "doh_contacted": list(self.doh_contacted),
            "dot_attempted": self.dot_attempted,
        }


def default_protocol(flows: list[CapturedFlow]) -> str | None:
    """Scheme of the earliest request to the host served on both schemes."""
    candidates = [f for f in flows if f.host == BARE_HOST and f.method]
    if not candidates:
        return None
    first = min(candidates, key=lambda f: (f.ts_start, f.flow_id))
    return urlsplit(first.url).scheme


def accepts_untrusted_cert(untrusted_flows: list[CapturedFlow]) -> bool | None:
    """Did any request complete against the unverifiable authority?

    Completed means the handshake finished and a response came back;
    aborted handshakes alone prove the opposite. No TLS traffic at all in
    the untrusted pass leaves the question open.
    """
    tls_flows = [f for f in untrusted_flows if f.tls is not None and f.tls.cert_mode == "untrusted"]
    if not tls_flows:
        return None
    return any(
        f.tls.handshake_completed and f.status is not None
        for f in tls_flows
    )


def mixed_content_behavior(flows: list[CapturedFlow]) -> str:
    http_urls = set(MIXED_SUBRESOURCES)
    https_urls = {u.replace("http://", "https://", 1) for u in http_urls}
    page_url = f"https://{MIXED_HOST}/"
    fetched = {f.url for f in flows if f.method}
    if fetched & http_urls:
        return MIXED_ALLOWED
    if fetched & https_urls:
        return MIXED_UPGRADED
    if page_url in fetched:
        return MIXED_BLOCKED
    return MIXED_NOT_TESTED


def weak_suites_offered(flows: list[CapturedFlow], rc4: dict[str, str] | None = None) -> tuple[str, ...]:
    if rc4 is None:
        rc4 = load_rc4_suites()
    offered: set[str] = set()
    for flow in flows:
        if flow.tls is not None:
            offered.update(flow.tls.ciphersuites_offered)
    return tuple(sorted(offered & set(rc4)))


def encrypted_dns_use(flows: list[CapturedFlow], registry: dict | None = None) -> tuple[tuple[str, ...], bool]:
    """(DoH endpoints contacted, any DoT-port attempt)."""
    if registry is None:
        registry = load_doh_registry()
    doh_hosts = set(registry["hosts"])
    paths = tuple(registry["paths"])
    dot_port = registry["dot_port"]
    contacted: set[str] = set()
    dot = False
    for flow in flows:
        parts = urlsplit(flow.url)
        host = (parts.hostname or "").lower()
        if host in doh_hosts and (parts.path or "/").startswith(paths):
            contacted.add(host)
        if parts.port == dot_port:
            dot = True
    return tuple(sorted(contacted)), dot


def analyze(flows: list[CapturedFlow], untrusted_flows: list[CapturedFlow]) -> ConnSecReport:
    weak = weak_suites_offered(flows + untrusted_flows)
    doh, dot = encrypted_dns_use(flows)
    return ConnSecReport(
        default_protocol=default_protocol(flows),
        accepts_untrusted_cert=accepts_untrusted_cert(untrusted_flows),
        mixed_content=mixed_content_behavior(flows),
        rc4_offered=bool(weak),
        weak_suites_offered=weak,
        doh_contacted=doh,
        dot_attempted=dot,
    )
