"""DOM report contract shared by the collector and the analyses.

A report lists the script and link elements present in a rendered page.
Element identity is (tag, url-or-inline-digest, attrs-digest); the digest
recipes here must stay in lockstep with the in-page reporter, which
recomputes them independently in the browser.
"""

from __future__ import annotations

import fnmatch
import hashlib
import html.parser
from dataclasses import dataclass
from urllib.parse import urljoin, urlsplit

TRIPWIRE_MARKER = "data-gauntlet-tripwire"

REPORTED_TAGS = ("script", "link")


def attrs_digest(attrs: list[tuple[str, str | None]]) -> str:
    """sha256 over 'name=value' lines sorted by lowercased attribute name.

    Bare attributes hash as empty values, matching getAttribute() === ''.
    """
    entries = sorted(
        ((name, "" if value is None else value) for name, value in attrs),
        key=lambda kv: kv[0].lower(),
    )
    joined = "\n".join(f"{name}={value}" for name, value in entries)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def inline_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ReportedElement:
    tag: str
    attrs_digest: str
    url: str | None = None
    inline_digest: str | None = None

    @property
    def identity(self) -> tuple[str, str, str]:
        return (self.tag, self.url or self.inline_digest or "", self.attrs_digest)

    def to_json(self) -> dict:
        obj = {"tag": self.tag, "attrs_digest": self.attrs_digest}
        if self.url is not None:
            obj["url"] = self.url
        if self.inline_digest is not None:
            obj["inline_digest"] = self.inline_digest
        return obj


@dataclass(frozen=True)
class DomReport:
    page_url: str
    elements: tuple[ReportedElement, ...]
    ts: int

    def to_json(self) -> dict:
        return {
            "page_url": self.page_url,
            "elements": [e.to_json() for e in self.elements],
            "ts": self.ts,
        }


_HEX64 = frozenset("0123456789abcdef")


def _is_hex_digest(value) -> bool:
    return isinstance(value, str) and len(value) == 64 and set(value) <= _HEX64


def validate_report(obj) -> DomReport:
    """Check a collector /report body; raises ValueError with the defect."""
    if not isinstance(obj, dict):
        raise ValueError("report must be an object")
    page_url = obj.get("page_url")
    if not isinstance(page_url, str) or not page_url:
        raise ValueError("page_url must be a non-empty string")
    ts = obj.get("ts")
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise ValueError("ts must be an integer")
    elements = obj.get("elements")
    if not isinstance(elements, list):
        raise ValueError("elements must be a list")
    parsed = []
    for i, el in enumerate(elements):
        if not isinstance(el, dict):
            raise ValueError(f"elements[{i}] must be an object")
        tag = el.get("tag")
        if tag not in REPORTED_TAGS:
            raise ValueError(f"elements[{i}].tag must be one of {REPORTED_TAGS}")
        if not _is_hex_digest(el.get("attrs_digest")):
            raise ValueError(f"elements[{i}].attrs_digest must be 64 hex chars")
        url = el.get("url")
        inline = el.get("inline_digest")
        if url is None and inline is None:
            raise ValueError(f"elements[{i}] needs url or inline_digest")
        if url is not None and not isinstance(url, str):
            raise ValueError(f"elements[{i}].url must be a string")
        if inline is not None and not _is_hex_digest(inline):
            raise ValueError(f"elements[{i}].inline_digest must be 64 hex chars")
        parsed.append(
            ReportedElement(tag=tag, attrs_digest=el["attrs_digest"], url=url, inline_digest=inline)
        )
    return DomReport(page_url=page_url, elements=tuple(parsed), ts=ts)


class _ElementExtractor(html.parser.HTMLParser):
    def __init__(self, page_url: str, exclude_tripwire: bool) -> None:
        super().__init__(convert_charrefs=True)
        self.page_url = page_url
        self.exclude_tripwire = exclude_tripwire
        self.elements: list[ReportedElement] = []
        self._open_script: list[tuple[str, str | None]] | None = None
        self._script_text: list[str] = []

    def handle_starttag(self, tag: str, attrs) -> None:
        if tag not in REPORTED_TAGS:
            return
        names = {name for name, _ in attrs}
        if self.exclude_tripwire and TRIPWIRE_MARKER in names:
            return
        if tag == "link":
            href = dict(attrs).get("href")
            if href is None:
                return
            self.elements.append(ReportedElement(
                tag="link",
                url=urljoin(self.page_url, href),
                attrs_digest=attrs_digest(attrs),
            ))
        else:
            src = dict(attrs).get("src")
            if src is not None:
                self.elements.append(ReportedElement(
                    tag="script",
                    url=urljoin(self.page_url, src),
                    attrs_digest=attrs_digest(attrs),
                ))
                self._open_script = None
            else:
                self._open_script = list(attrs)
                self._script_text = []

    def handle_data(self, data: str) -> None:
        if self._open_script is not None:
            self._script_text.append(data)

    def handle_endtag(self, tag: str) -> None:
        if tag == "script" and self._open_script is not None:
            self.elements.append(ReportedElement(
                tag="script",
                inline_digest=inline_digest("".join(self._script_text)),
                attrs_digest=attrs_digest(self._open_script),
            ))
            self._open_script = None


def extract_elements(page_url: str, html_text: str, exclude_tripwire: bool = True) -> tuple[ReportedElement, ...]:
    """Script/link elements as served, for diffing against a DOM report."""
    parser = _ElementExtractor(page_url, exclude_tripwire)
    parser.feed(html_text)
    parser.close()
    return tuple(parser.elements)


@dataclass(frozen=True)
class DomDiff:
    missing: tuple[ReportedElement, ...]   # served but absent from the report
    added: tuple[ReportedElement, ...]     # reported but never served

    @property
    def empty(self) -> bool:
        return not self.missing and not self.added


def _allowlisted(el: ReportedElement, allowlist) -> bool:
    if not allowlist or el.url is None:
        return False
    return any(fnmatch.fnmatch(el.url, pat) for pat in allowlist)


def diff(
    expected: tuple[ReportedElement, ...],
    reported: tuple[ReportedElement, ...],
    allowlist: tuple[str, ...] = (),
) -> DomDiff:
    """Set-difference by element identity, both directions.

    Allowlist patterns (fnmatch over the element URL) name legitimately
    dynamic elements; those are dropped from both sides before diffing.
    """
    expected = tuple(e for e in expected if not _allowlisted(e, allowlist))
    reported = tuple(e for e in reported if not _allowlisted(e, allowlist))
    expected_ids = {e.identity for e in expected}
    reported_ids = {e.identity for e in reported}
    missing = tuple(e for e in expected if e.identity not in reported_ids)
    added = tuple(e for e in reported if e.identity not in expected_ids)
    return DomDiff(missing=missing, added=added)


# Classification of diffed elements. Only TRACKER_LISTED feeds the score;
# the rest label the report for a human reader.
TRACKER_LISTED = "tracker_listed"
ANALYTICS = "analytics"
AD = "ad"
WIDGET = "widget"
OTHER = "other"

_ANALYTICS_HINTS = ("analytics", "telemetry", "metrics", "tagmanager", "statcounter", "beacon")
_AD_HINTS = ("doubleclick", "adserver", "adsystem", "/ads/", "ads.", "advert", "banner", "sponsor")
_WIDGET_HINTS = ("platform.twitter.com", "connect.facebook", "widget", "embed", "share-button")

_TAG_RESOURCE_TYPE = {"script": "script", "link": "stylesheet"}


@dataclass(frozen=True)
class ClassifiedElement:
    element: ReportedElement
    classification: str
    rule: str | None = None   # raw filter rule text when tracker_listed

    def to_json(self) -> dict:
        obj = self.element.to_json()
        obj["classification"] = self.classification
        if self.rule is not None:
            obj["rule"] = self.rule
        return obj


def classify_element(
    el: ReportedElement,
    filters,
    page_url: str,
    widget_digests: frozenset[str] = frozenset(),
) -> ClassifiedElement:
    """Label one element: filter-listed tracker first, then host/keyword hints."""
    if el.url is None:
        if el.inline_digest in widget_digests:
            return ClassifiedElement(el, WIDGET)
        return ClassifiedElement(el, OTHER)
    decision = filters.decide(el.url, page_url, _TAG_RESOURCE_TYPE.get(el.tag, "other"))
    if decision.blocked:
        return ClassifiedElement(el, TRACKER_LISTED, rule=decision.rule.raw)
    low = el.url.lower()
    for hints, label in ((_ANALYTICS_HINTS, ANALYTICS), (_AD_HINTS, AD), (_WIDGET_HINTS, WIDGET)):
        if any(h in low for h in hints):
            return ClassifiedElement(el, label)
    return ClassifiedElement(el, OTHER)


def classify_diff(
    d: DomDiff, filters, page_url: str, widget_digests: frozenset[str] = frozenset()
) -> tuple[tuple[ClassifiedElement, ...], tuple[ClassifiedElement, ...]]:
    """(missing, added) with every element carrying its classification."""
    missing = tuple(classify_element(e, filters, page_url, widget_digests) for e in d.missing)
    added = tuple(classify_element(e, filters, page_url, widget_digests) for e in d.added)
    return missing, added


@dataclass(frozen=True)
class InjectionFinding:
    key: str                    # element URL, or inline digest for inline scripts
    tag: str
    source_host: str | None
    pages: tuple[str, ...]      # every page the element was added on, sorted
    recurring: bool             # appeared on two or more distinct pages
    foreign_host: bool          # host never contacted by the reference client

    def to_json(self) -> dict:
        return {
            "key": self.key,
            "tag": self.tag,
            "source_host": self.source_host,
            "pages": list(self.pages),
            "recurring": self.recurring,
            "foreign_host": self.foreign_host,
        }


def detect_injection(
    page_diffs: list[tuple[str, DomDiff]],
    baseline_hosts: frozenset[str] | set[str],
    allowlist: tuple[str, ...] = (),
) -> tuple[InjectionFinding, ...]:
    """Flag added elements that look subject-injected rather than page dynamics.

    An added element counts when it recurs on two or more distinct pages, or
    when its host was never contacted by the reference client. A one-page
    addition from a known host stays unflagged: indistinguishable from
    legitimate variation.
    """
    groups: dict[tuple[str, str], set[str]] = {}
    for page_url, d in page_diffs:
        for el in d.added:
            if _allowlisted(el, allowlist):
                continue
            key = el.url or el.inline_digest or ""
            groups.setdefault((el.tag, key), set()).add(page_url)
    findings = []
    for (tag, key), pages in sorted(groups.items()):
        host = (urlsplit(key).hostname or "").lower() if "://" in key else None
        recurring = len(pages) >= 2
        foreign = host is not None and host not in baseline_hosts
        if recurring or foreign:
            findings.append(InjectionFinding(
                key=key, tag=tag, source_host=host,
                pages=tuple(sorted(pages)),
                recurring=recurring, foreign_host=foreign,
            ))
    return tuple(findings)
