"""Browsing-history exposure: who learned which sites were visited.

A destination is suspicious when the subject talks to it unprompted and
the traffic names a large share of the sites the battery browsed. Known
client features (search suggestions, safety lookups, favicon services)
legitimately transmit visited hostnames; hits matching the feature
registry keep their finding but are labeled with the feature so scoring
can treat them as disclosed behavior instead of covert sharing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from urllib.parse import unquote, urlsplit

from .flows import CapturedFlow
from .inject import COLLECTOR_HOST
from .leaks import PiiFinding, _decode_request_body
from .psl import etld_plus_one


@dataclass(frozen=True)
class FeatureEntry:
    host: str
    path_prefix: str
    feature: str


def load_feature_registry() -> tuple[FeatureEntry, ...]:
    text = (resources.files("gauntlet.data") / "feature_registry.json").read_text("utf-8")
    return tuple(
        FeatureEntry(e["host"], e["path_prefix"], e["feature"])
        for e in json.loads(text)["entries"]
    )


@dataclass(frozen=True)
class HistoryFinding:
    destination_host: str
    destination_org: str
    fraction: float
    matched_hosts: tuple[str, ...]
    feature: str | None
    co_sent_pii: tuple[str, ...]
    flow_ids: tuple[str, ...]

    @property
    def covert(self) -> bool:
        return self.feature is None

    def to_json(self) -> dict:
        return {
            "destination_host": self.destination_host,
            "destination_org": self.destination_org,
            "fraction": self.fraction,
            "matched_hosts": list(self.matched_hosts),
            "feature": self.feature,
            "co_sent_pii": list(self.co_sent_pii),
            "flow_ids": list(self.flow_ids),
        }


def _flow_text(flow: CapturedFlow) -> str:
    body, _ = _decode_request_body(flow)
    header_text = "\n".join(f"{k}: {v}" for k, v in flow.request_headers).lower()
    return "\n".join((unquote(flow.url.lower()), header_text, body))


def _feature_for(flow: CapturedFlow, registry: tuple[FeatureEntry, ...]) -> str | None:
    parts = urlsplit(flow.url)
    host = (parts.hostname or "").lower()
    path = parts.path or "/"
    for entry in registry:
        if host == entry.host and path.startswith(entry.path_prefix):
            return entry.feature
    return None


def candidate_destinations(
    flows: list[CapturedFlow],
    visited_hosts: list[str],
    baseline_hosts: set[str],
) -> dict[str, list[CapturedFlow]]:
    """Destinations only this subject talks to, keyed host -> its flows.

    Hosts the faithful client also contacts are page-driven, and anything
    sharing a site with a visited page is talking to itself; neither can
    evidence history sharing. The collector never counts.
    """
    visited_sites = {etld_plus_one(h) for h in visited_hosts}
    grouped: dict[str, list[CapturedFlow]] = {}
    for flow in flows:
        host = flow.host
        if not host or not flow.method:
            continue
        if host == COLLECTOR_HOST or host in baseline_hosts:
            continue
        if etld_plus_one(host) in visited_sites:
            continue
        grouped.setdefault(host, []).append(flow)
    return grouped


def analyze(
    flows: list[CapturedFlow],
    visited_hosts: list[str],
    popular_hosts: list[str],
    baseline_hosts: set[str],
    threshold: float = 0.5,
    registry: tuple[FeatureEntry, ...] | None = None,
    pii_findings: list[PiiFinding] | None = None,
    org_map: dict[str, str] | None = None,
) -> list[HistoryFinding]:
    """History-exposure findings over one subject's flow log.

    The exposure fraction is measured against the browsed popular sites
    only; infrastructure pages exist for other probes and would dilute
    the denominator with hosts no real history contains.
    """
    if registry is None:
        registry = load_feature_registry()
    popular = [h.lower() for h in popular_hosts]
    findings = []
    for host, host_flows in sorted(candidate_destinations(flows, visited_hosts, baseline_hosts).items()):
        matched: set[str] = set()
        features: list[str] = []
        for flow in host_flows:
            text = _flow_text(flow)
            matched.update(h for h in popular if h in text)
            feature = _feature_for(flow, registry)
            if feature is not None:
                features.append(feature)
        fraction = len(matched) / len(popular) if popular else 0.0
        if fraction <= threshold:
            continue
        site = etld_plus_one(host)
        co_pii = tuple(sorted({
            f.pii_type for f in (pii_findings or [])
            if f.destination_host == host
        }))
        findings.append(HistoryFinding(
            destination_host=host,
            destination_org=(org_map or {}).get(site, site),
            fraction=fraction,
            matched_hosts=tuple(sorted(matched)),
            feature=features[0] if features else None,
            co_sent_pii=co_pii,
            flow_ids=tuple(f.flow_id for f in host_flows),
        ))
    return findings
