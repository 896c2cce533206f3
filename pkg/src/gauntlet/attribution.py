"""Attributing observed flows to the pages that caused them.

Pages the battery navigates to are roots. Every other flow is attributed
through its Referer header: the edge points from the referring URL to the
fetched one, and attribution follows edges in flow-time order so a URL
inherits the page of the earliest referrer that was itself already
attributed. What remains unattributed is traffic the subject started on
its own, which is exactly the pool later analyses care about.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from urllib.parse import urlsplit

from .filters import FilterSet
from .flows import CapturedFlow
from .inject import COLLECTOR_HOST

# Resource class by URL extension; the coarse buckets the filter options use.
_EXT_TYPES = {
    "js": "script",
    "mjs": "script",
    "css": "stylesheet",
    "png": "image",
    "jpg": "image",
    "jpeg": "image",
    "gif": "image",
    "webp": "image",
    "svg": "image",
    "ico": "image",
    "html": "subdocument",
    "htm": "subdocument",
}


def resource_type_for(url: str) -> str:
    path = urlsplit(url).path
    name = path.rsplit("/", 1)[-1]
    if "." in name:
        ext = name.rsplit(".", 1)[-1].lower()
        return _EXT_TYPES.get(ext, "other")
    return "other"


@dataclass
class AttributionMap:
    page_of: dict[str, str] = field(default_factory=dict)    # flow_id -> root page url
    url_page: dict[str, str] = field(default_factory=dict)   # url -> root page url
    unattributed: list[CapturedFlow] = field(default_factory=list)

    def attributed_flows(self, flows: list[CapturedFlow]) -> list[CapturedFlow]:
        return [f for f in flows if f.flow_id in self.page_of]


def attribute_flows(flows: list[CapturedFlow], root_urls: list[str]) -> AttributionMap:
    """Earliest-referrer attribution over the flow log.

    Flows are walked in time order, so by the time a flow is considered,
    every URL fetched before it has its final page assignment; first
    assignment wins and later edges cannot move a URL to another page.
    """
    result = AttributionMap()
    roots = set(root_urls)
    ordered = sorted(flows, key=lambda f: (f.ts_start, f.flow_id))
    for flow in ordered:
        url = flow.url
        if url in roots:
            result.url_page.setdefault(url, url)
            result.page_of[flow.flow_id] = url
            continue
        if url in result.url_page:
            # refetches keep the URL's original page: earliest edge wins
            result.page_of[flow.flow_id] = result.url_page[url]
            continue
        referer = flow.header("referer")
        if referer and referer != url and referer in result.url_page:
            page = result.url_page[referer]
            result.url_page[url] = page
            result.page_of[flow.flow_id] = page
        else:
            result.unattributed.append(flow)
    return result


def subject_initiated(flows: list[CapturedFlow], root_urls: list[str]) -> list[CapturedFlow]:
    """Flows no page explains, minus testbed plumbing."""
    attribution = attribute_flows(flows, root_urls)
    return [
        f for f in attribution.unattributed
        if f.host != COLLECTOR_HOST and f.method != ""
    ]


@dataclass(frozen=True)
class TrackingUse:
    flow_id: str
    url: str
    page_url: str
    rule: str


def detect_allowed_tracking(
    flows: list[CapturedFlow],
    attribution: AttributionMap,
    filters: FilterSet,
) -> list[TrackingUse]:
    """Page-attributed fetches that the bundled lists would have blocked."""
    out = []
    for flow in flows:
        page = attribution.page_of.get(flow.flow_id)
        if page is None or flow.url == page or flow.method == "":
            continue
        decision = filters.decide(flow.url, page, resource_type_for(flow.url))
        if decision.blocked:
            out.append(TrackingUse(
                flow_id=flow.flow_id,
                url=flow.url,
                page_url=page,
                rule=decision.rule.raw if decision.rule else "",
            ))
    return out


def blocking_credit(
    flows: list[CapturedFlow],
    attribution: AttributionMap,
    filters: FilterSet,
    offering_page: str,
    expected_listed: list[str],
) -> bool:
    """Whether the subject withheld the filterlisted fetches it was offered.

    Credit needs proof of opportunity: the offering page must have been
    visited, none of its listed resources fetched anywhere, and at least
    one other subresource of that page fetched (a client that loads no
    subresources at all earns nothing).
    """
    if detect_allowed_tracking(flows, attribution, filters):
        return False
    if offering_page not in attribution.url_page:
        return False
    expected = set(expected_listed)
    if any(f.url in expected for f in flows):
        return False
    fetched_from_page = [
        f for f in flows
        if attribution.page_of.get(f.flow_id) == offering_page and f.url != offering_page
    ]
    return bool(fetched_from_page)


def attribute_engine(flows: list[CapturedFlow], test_urls: list[str], package_name: str) -> str:
    """'webview' when every test-page request self-identifies, else 'external-or-mixed'."""
    page_flows = [f for f in flows if f.url in set(test_urls) and f.method]
    if not page_flows:
        return "unknown"
    if all(f.header("x-requested-with") == package_name for f in page_flows):
        return "webview"
    return "external-or-mixed"
