"""Captured-traffic data model, session logs, and the keyed response cache.

Every request a subject makes during a battery becomes one CapturedFlow,
appended to the session's JSONL log as it completes. Replay determinism
hangs off request_key: the canonical form strips volatile cache-buster
query parameters and ignores the scheme, so an https-upgraded fetch still
hits the entry recorded over plain http (that mismatch is itself a signal
the connection-security analysis consumes).
"""

from __future__ import annotations

import base64
import json
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from urllib.parse import parse_qsl, urlencode, urlsplit

VOLATILE_QUERY_PARAMS = frozenset({"ts", "cb", "rnd", "nonce"})

TRANSPORT_TCP = "tcp"
TRANSPORT_UDP_DNS = "udp-dns"
TRANSPORT_UDP_DROPPED = "dropped-udp"

Headers = tuple[tuple[str, str], ...]


def request_key(method: str, url: str) -> str:
    """Canonical cache key for a request: method, host, path, stable query."""
    parts = urlsplit(url)
    host = (parts.hostname or "").lower()
    port = parts.port
    if port and port not in (80, 443):
        host = f"{host}:{port}"
    path = parts.path or "/"
    pairs = [
        (k, v)
        for k, v in parse_qsl(parts.query, keep_blank_values=True)
        if k.lower() not in VOLATILE_QUERY_PARAMS
    ]
    pairs.sort()
    key = f"{method.upper()} {host}{path}"
    if pairs:
        key += "?" + urlencode(pairs)
    return key


@dataclass(frozen=True)
class TlsInfo:
    cert_mode: str                        # 'trusted' | 'untrusted'
    handshake_completed: bool
    version: str | None = None            # e.g. 'TLSv1.3'
    ciphersuites_offered: tuple[str, ...] = ()   # hex codes like '0x1301'
    cipher_negotiated: str | None = None

    def to_json(self) -> dict:
        return {
            "cert_mode": self.cert_mode,
            "handshake_completed": self.handshake_completed,
            "version": self.version,
            "ciphersuites_offered": list(self.ciphersuites_offered),
            "cipher_negotiated": self.cipher_negotiated,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TlsInfo":
        return cls(
            cert_mode=obj["cert_mode"],
            handshake_completed=obj["handshake_completed"],
            version=obj.get("version"),
            ciphersuites_offered=tuple(obj.get("ciphersuites_offered", ())),
            cipher_negotiated=obj.get("cipher_negotiated"),
        )


@dataclass(frozen=True)
class CapturedFlow:
    flow_id: str
    session_id: str
    ts_start: int                         # unix ms
    method: str
    url: str
    ts_end: int | None = None
    request_headers: Headers = ()
    request_body: bytes = b""
    response_headers: Headers = ()
    response_body: bytes = b""
    status: int | None = None             # None = no response seen
    tls: TlsInfo | None = None
    transport: str = TRANSPORT_TCP
    intercepted: bool = True

    @property
    def host(self) -> str:
        return (urlsplit(self.url).hostname or "").lower()

    @property
    def scheme(self) -> str:
        return urlsplit(self.url).scheme

    @property
    def path(self) -> str:
        return urlsplit(self.url).path or "/"

    def header(self, name: str, which: str = "request") -> str | None:
        pairs = self.request_headers if which == "request" else self.response_headers
        name = name.lower()
        for k, v in pairs:
            if k.lower() == name:
                return v
        return None

    def key(self) -> str:
        return request_key(self.method, self.url)

    def to_json(self) -> dict:
        obj = {
            "flow_id": self.flow_id,
            "session_id": self.session_id,
            "ts_start": self.ts_start,
            "ts_end": self.ts_end,
            "method": self.method,
            "url": self.url,
            "request_headers": [list(p) for p in self.request_headers],
            "request_body": base64.b64encode(self.request_body).decode("ascii"),
            "response_headers": [list(p) for p in self.response_headers],
            "response_body": base64.b64encode(self.response_body).decode("ascii"),
            "transport": self.transport,
            "intercepted": self.intercepted,
        }
        if self.status is not None:
            obj["status"] = self.status
        if self.tls is not None:
            obj["tls"] = self.tls.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "CapturedFlow":
        return cls(
            flow_id=obj["flow_id"],
            session_id=obj["session_id"],
            ts_start=obj["ts_start"],
            ts_end=obj.get("ts_end"),
            method=obj["method"],
            url=obj["url"],
            request_headers=tuple((k, v) for k, v in obj.get("request_headers", ())),
            request_body=base64.b64decode(obj.get("request_body", "")),
            response_headers=tuple((k, v) for k, v in obj.get("response_headers", ())),
            response_body=base64.b64decode(obj.get("response_body", "")),
            status=obj.get("status"),
            tls=TlsInfo.from_json(obj["tls"]) if obj.get("tls") else None,
            transport=obj.get("transport", TRANSPORT_TCP),
            intercepted=obj.get("intercepted", True),
        )

    def finished(self, ts_end: int, status: int, response_headers: Headers, response_body: bytes) -> "CapturedFlow":
        return replace(
            self,
            ts_end=ts_end,
            status=status,
            response_headers=response_headers,
            response_body=response_body,
        )


class FlowWriter:
    """Append-only JSONL sink for one session's flows. Thread-safe."""

    def __init__(self, path: str | Path, session_id: str) -> None:
        self.path = Path(path)
        self.session_id = session_id
        self._lock = threading.Lock()
        self._seq = 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def next_flow_id(self) -> str:
        with self._lock:
            self._seq += 1
            return f"{self.session_id}:{self._seq:05d}"

    def append(self, flow: CapturedFlow) -> None:
        line = json.dumps(flow.to_json(), sort_keys=True, separators=(",", ":"))
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def __enter__(self) -> "FlowWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def load_flows(path: str | Path) -> list[CapturedFlow]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(CapturedFlow.from_json(json.loads(line)))
    return out


@dataclass(frozen=True)
class CachedResponse:
    status: int
    headers: Headers
    body: bytes

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "headers": [list(p) for p in self.headers],
            "body": base64.b64encode(self.body).decode("ascii"),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CachedResponse":
        return cls(
            status=obj["status"],
            headers=tuple((k, v) for k, v in obj.get("headers", ())),
            body=base64.b64decode(obj.get("body", "")),
        )


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    stores: int = 0


class ResponseCache:
    """First-write-wins response store shared by record and replay passes.

    Recording consults the cache before going upstream, so a page fetched
    twice within one epoch is served identically both times. Replay never
    goes upstream: a miss is answered by a synthesized error the caller
    provides, and counted here.
    """

    META = "meta.json"
    ENTRIES = "entries.jsonl"

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.epoch = 0
        self.entries: dict[str, CachedResponse] = {}
        self.stats = CacheStats()
        self._lock = threading.Lock()

    @classmethod
    def open(cls, root: str | Path) -> "ResponseCache":
        cache = cls(root)
        meta_path = cache.root / cls.META
        if meta_path.exists():
            meta = json.loads(meta_path.read_text("utf-8"))
            cache.epoch = meta.get("epoch", 0)
            entries_path = cache.root / cls.ENTRIES
            if entries_path.exists():
                with open(entries_path, encoding="utf-8") as fh:
                    for line in fh:
                        line = line.strip()
                        if not line:
                            continue
                        obj = json.loads(line)
                        cache.entries[obj["key"]] = CachedResponse.from_json(obj)
        return cache

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, key: str) -> CachedResponse | None:
        with self._lock:
            found = self.entries.get(key)
            if found is None:
                self.stats.misses += 1
            else:
                self.stats.hits += 1
            return found

    def store(self, key: str, response: CachedResponse) -> bool:
        """Store unless present; the first recorded response wins."""
        with self._lock:
            if key in self.entries:
                return False
            self.entries[key] = response
            self.stats.stores += 1
            return True

    def rebuild(self) -> None:
        """Drop all entries and advance the epoch counter."""
        with self._lock:
            self.entries.clear()
            self.epoch += 1
            self.stats = CacheStats()

    def flush(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = self.root / (self.ENTRIES + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for key in sorted(self.entries):
                obj = self.entries[key].to_json()
                obj["key"] = key
                fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")
        tmp.replace(self.root / self.ENTRIES)
        meta = {"epoch": self.epoch, "entry_count": len(self.entries)}
        (self.root / self.META).write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", "utf-8"
        )


# Convenience alias used by analysis code reading whole sessions.
def flows_by_host(flows: list[CapturedFlow]) -> dict[str, list[CapturedFlow]]:
    out: dict[str, list[CapturedFlow]] = {}
    for f in flows:
        out.setdefault(f.host, []).append(f)
    return out
