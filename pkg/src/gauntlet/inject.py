"""Tripwire script injection into proxied HTML responses.

The injected element is the ground-truth beacon: whatever the subject's
renderer keeps in the DOM reports back to the collector, and diffing that
against what was served reveals content filtering. Injection must be
byte-deterministic so replayed sessions stay byte-identical.
"""

from __future__ import annotations

import gzip
import re
import zlib
from dataclasses import dataclass

from .flows import Headers

COLLECTOR_HOST = "collector.gauntlet.invalid"
TRIPWIRE_URL = f"http://{COLLECTOR_HOST}/tripwire.js"
TRIPWIRE_MARKER = "data-gauntlet-tripwire"
TRIPWIRE_TAG = f'<script src="{TRIPWIRE_URL}" {TRIPWIRE_MARKER}="1"></script>'

_HEAD_OPEN = re.compile(rb"<head(?:\s[^>]*)?>", re.IGNORECASE)
_BODY_OPEN = re.compile(rb"<body(?:\s[^>]*)?>", re.IGNORECASE)
_HTML_SNIFF = re.compile(rb"<html", re.IGNORECASE)
_SNIFF_WINDOW = 512


@dataclass(frozen=True)
class InjectionResult:
    body: bytes
    headers: Headers
    injected: bool
    reason: str   # injected | not-html | already-present | unknown-encoding | undecodable


def _get_header(headers: Headers, name: str) -> str | None:
    name = name.lower()
    for k, v in headers:
        if k.lower() == name:
            return v
    return None


def _set_header(headers: Headers, name: str, value: str) -> Headers:
    out = []
    done = False
    for k, v in headers:
        if k.lower() == name.lower() and not done:
            out.append((k, value))
            done = True
        else:
            out.append((k, v))
    if not done:
        out.append((name, value))
    return tuple(out)


def _decode_body(body: bytes, encoding: str) -> bytes | None:
    if encoding in ("", "identity"):
        return body
    try:
        if encoding == "gzip":
            return gzip.decompress(body)
        if encoding == "deflate":
            try:
                return zlib.decompress(body)
            except zlib.error:
                return zlib.decompress(body, -zlib.MAX_WBITS)
    except (OSError, zlib.error, EOFError):
        return None
    return None


def _encode_body(body: bytes, encoding: str) -> bytes:
    if encoding in ("", "identity"):
        return body
    if encoding == "gzip":
        # mtime pinned to zero so re-encoding is reproducible byte for byte
        return gzip.compress(body, compresslevel=6, mtime=0)
    if encoding == "deflate":
        return zlib.compress(body, 6)
    raise ValueError(encoding)


def is_html(headers: Headers, decoded_body: bytes) -> bool:
    ctype = (_get_header(headers, "content-type") or "").strip().lower()
    if ctype.startswith("text/html"):
        return True
    return _HTML_SNIFF.search(decoded_body[:_SNIFF_WINDOW]) is not None


def _insertion_point(body: bytes) -> int:
    m = _HEAD_OPEN.search(body)
    if m:
        return m.end()
    m = _BODY_OPEN.search(body)
    if m:
        return m.end()
    return 0


def inject_tripwire(headers: Headers, body: bytes) -> InjectionResult:
    """Insert the tripwire script element at the start of head (or body).

    Returns the possibly rewritten body and headers. Unknown content
    encodings pass through untouched; the caller records the reason.
    """
    encoding = (_get_header(headers, "content-encoding") or "").strip().lower()
    if encoding not in ("", "identity", "gzip", "deflate"):
        return InjectionResult(body, headers, False, "unknown-encoding")
    decoded = _decode_body(body, encoding)
    if decoded is None:
        return InjectionResult(body, headers, False, "undecodable")
    if not is_html(headers, decoded):
        return InjectionResult(body, headers, False, "not-html")
    if TRIPWIRE_MARKER.encode("ascii") in decoded:
        return InjectionResult(body, headers, False, "already-present")

    at = _insertion_point(decoded)
    new_decoded = decoded[:at] + TRIPWIRE_TAG.encode("ascii") + decoded[at:]
    new_body = _encode_body(new_decoded, encoding)
    new_headers = headers
    if _get_header(headers, "content-length") is not None:
        new_headers = _set_header(new_headers, "Content-Length", str(len(new_body)))
    return InjectionResult(new_body, new_headers, True, "injected")
