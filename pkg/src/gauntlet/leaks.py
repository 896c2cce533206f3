"""Identifier-leak detection over captured request traffic.

Scanning is one-directional: only the URL, request headers, and request
body can carry device data off the client, so responses are ignored.
Needles cover the plain textual forms of each profile value (plus their
URL-encoded spellings) and the hex digests of every canonical form under
the common hash algorithms. Matching is substring search over lowercased
haystacks; hex digests are long enough to make chance hits negligible.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import zlib
from dataclasses import dataclass
from importlib import resources
from urllib.parse import quote

from .flows import CapturedFlow
from .profiles import DeviceProfile
from .psl import etld_plus_one

PII_TYPES = ("adid", "android_id", "imei", "mac", "geolocation", "app_list")
HASH_ALGOS = ("md5", "sha1", "sha224", "sha256")
ENCODINGS = ("plain",) + HASH_ALGOS
LOCATIONS = ("url", "header", "body")
RESETTABLE_TYPES = frozenset({"adid"})

# Positions after the decimal point per geolocation precision tier.
GEO_TIERS = (4, 3, 2)


def mac_forms(mac: str) -> tuple[str, ...]:
    parts = mac.lower().split(":")
    return (":".join(parts), "-".join(parts), "".join(parts))


def geo_strings(lat: float, lon: float, places: int) -> tuple[str, str]:
    return (f"{lat:.{places}f}", f"{lon:.{places}f}")


def geo_combined_form(lat: float, lon: float) -> str:
    a, b = geo_strings(lat, lon, 4)
    return f"{a},{b}"


def canonical_forms(profile: DeviceProfile) -> dict[str, tuple[str, ...]]:
    """The value spellings that get hashed, one tuple per identifier type."""
    return {
        "adid": (profile.adid.lower(),),
        "android_id": (profile.android_id.lower(),),
        "imei": (profile.imei,),
        "mac": mac_forms(profile.mac),
        "geolocation": (geo_combined_form(profile.latitude, profile.longitude),),
        "app_list": tuple(p.lower() for p in profile.app_list),
    }


def digest(form: str, algo: str) -> str:
    return hashlib.new(algo, form.encode("utf-8")).hexdigest()


def _with_quoted(forms) -> tuple[str, ...]:
    out = []
    for form in forms:
        for variant in (form, quote(form), quote(form, safe="")):
            lowered = variant.lower()
            if lowered not in out:
                out.append(lowered)
    return tuple(out)


@dataclass(frozen=True)
class NeedleSet:
    # type -> plain needles (app_list entries stay separate needles)
    plain: dict[str, tuple[str, ...]]
    # (type, algo) -> digest needles
    hashed: dict[tuple[str, str], tuple[str, ...]]
    # per tier: (lat needle, lon needle)
    geo_tiers: tuple[tuple[str, str], ...]
    app_count_required: int


def build_needles(profile: DeviceProfile) -> NeedleSet:
    forms = canonical_forms(profile)
    plain = {
        "adid": _with_quoted(forms["adid"]),
        "android_id": _with_quoted(forms["android_id"]),
        "imei": _with_quoted(forms["imei"]),
        "mac": _with_quoted(forms["mac"]),
        "app_list": _with_quoted(forms["app_list"]),
    }
    hashed = {}
    for pii_type, type_forms in forms.items():
        for algo in HASH_ALGOS:
            hashed[(pii_type, algo)] = tuple(digest(f, algo) for f in type_forms)
    geo_tiers = tuple(
        (a.lower(), b.lower())
        for a, b in (geo_strings(profile.latitude, profile.longitude, p) for p in GEO_TIERS)
    )
    return NeedleSet(
        plain=plain,
        hashed=hashed,
        geo_tiers=geo_tiers,
        app_count_required=min(3, len(profile.app_list)),
    )


@dataclass(frozen=True)
class PiiFinding:
    pii_type: str
    encoding: str          # plain | md5 | sha1 | sha224 | sha256
    location: str          # url | header | body
    destination_host: str
    destination_org: str
    flow_id: str
    party: str             # first | third
    resettable: bool
    degraded_scan: bool = False   # body could not be decoded; raw bytes scanned

    def to_json(self) -> dict:
        return {
            "pii_type": self.pii_type,
            "encoding": self.encoding,
            "location": self.location,
            "destination_host": self.destination_host,
            "destination_org": self.destination_org,
            "flow_id": self.flow_id,
            "party": self.party,
            "resettable": self.resettable,
            "degraded_scan": self.degraded_scan,
        }


def load_org_map() -> dict[str, str]:
    text = (resources.files("gauntlet.data") / "org_map.json").read_text("utf-8")
    return json.loads(text)["domains"]


def _decode_request_body(flow: CapturedFlow) -> tuple[str, bool]:
    """Request body as scan text, with a degraded flag when undecodable."""
    raw = flow.request_body
    if not raw:
        return "", False
    encoding = (flow.header("content-encoding") or "").lower()
    data = raw
    degraded = False
    if encoding == "gzip":
        try:
            data = gzip.decompress(raw)
        except (OSError, EOFError, zlib.error):
            data, degraded = raw, True
    elif encoding == "deflate":
        try:
            data = zlib.decompress(raw)
        except zlib.error:
            try:
                data = zlib.decompress(raw, -zlib.MAX_WBITS)
            except zlib.error:
                data, degraded = raw, True
    elif encoding not in ("", "identity"):
        data, degraded = raw, True
    charset = "utf-8"
    ctype = flow.header("content-type") or ""
    if "charset=" in ctype:
        charset = ctype.split("charset=", 1)[1].split(";")[0].strip() or "utf-8"
    try:
        return data.decode(charset, "replace").lower(), degraded
    except LookupError:
        return data.decode("utf-8", "replace").lower(), degraded


def _regions(flow: CapturedFlow) -> list[tuple[str, str, bool]]:
    """(location, haystack, degraded) in precedence order url > header > body."""
    url_text = flow.url.lower()
    header_text = "\n".join(f"{k}: {v}" for k, v in flow.request_headers).lower()
    body_text, degraded = _decode_request_body(flow)
    return [("url", url_text, False), ("header", header_text, False), ("body", body_text, degraded)]


def _plain_hit(pii_type: str, needles: NeedleSet, haystack: str) -> bool:
    if pii_type == "geolocation":
        return any(lat in haystack and lon in haystack for lat, lon in needles.geo_tiers)
    if pii_type == "app_list":
        # package names survive URL quoting unchanged, so needles == packages
        distinct = {n for n in needles.plain["app_list"] if n in haystack}
        return len(distinct) >= needles.app_count_required
    return any(n in haystack for n in needles.plain[pii_type])


def _hashed_hit(pii_type: str, algo: str, needles: NeedleSet, haystack: str) -> bool:
    matches = [n for n in needles.hashed[(pii_type, algo)] if n in haystack]
    if pii_type == "app_list":
        return len(set(matches)) >= needles.app_count_required
    return bool(matches)


def scan_flow(
    flow: CapturedFlow,
    needles: NeedleSet,
    declared_developer_domain: str | None = None,
    org_map: dict[str, str] | None = None,
) -> list[PiiFinding]:
    regions = _regions(flow)
    host = flow.host
    site = etld_plus_one(host) or host
    org = (org_map or {}).get(site, site)
    party = "first" if (
        declared_developer_domain
        and etld_plus_one(declared_developer_domain) == site
    ) else "third"
    findings = []
    for pii_type in PII_TYPES:
        for encoding in ENCODINGS:
            for location, haystack, degraded in regions:
                if not haystack:
                    continue
                if encoding == "plain":
                    hit = _plain_hit(pii_type, needles, haystack)
                else:
                    hit = _hashed_hit(pii_type, encoding, needles, haystack)
                if hit:
                    findings.append(PiiFinding(
                        pii_type=pii_type,
                        encoding=encoding,
                        location=location,
                        destination_host=host,
                        destination_org=org,
                        flow_id=flow.flow_id,
                        party=party,
                        resettable=pii_type in RESETTABLE_TYPES,
                        degraded_scan=degraded if location == "body" else False,
                    ))
                    break   # one finding per (type, encoding, flow); url wins
    return findings


def scan_flows(
    flows: list[CapturedFlow],
    profile: DeviceProfile,
    declared_developer_domain: str | None = None,
    org_map: dict[str, str] | None = None,
) -> list[PiiFinding]:
    needles = build_needles(profile)
    if org_map is None:
        org_map = load_org_map()
    out: list[PiiFinding] = []
    for flow in flows:
        out.extend(scan_flow(flow, needles, declared_developer_domain, org_map))
    return out


def exposed_types(findings: list[PiiFinding]) -> frozenset[str]:
    return frozenset(f.pii_type for f in findings)
