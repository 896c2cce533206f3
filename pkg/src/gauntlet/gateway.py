"""Intercepting gateway: explicit proxy, TLS termination, record/replay.

Subjects are pointed at this proxy for all traffic. Plain requests arrive
in absolute form; https arrives as CONNECT, answered with a leaf minted
by the active test authority so the tunnel can be read and the tripwire
injected. Responses come from the keyed cache (replay) or the in-process
site farm (record), never the real network.

The collector lives here too: tripwire and probe reports are ordinary
proxied requests to a reserved host, which keeps them in the flow log
like any other traffic.
"""

from __future__ import annotations

import json
import socket
import ssl
import struct
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import urlsplit

from . import dom, webapi
from .certs import CertAuthority
from .flows import (
    TRANSPORT_TCP,
    TRANSPORT_UDP_DNS,
    TRANSPORT_UDP_DROPPED,
    CachedResponse,
    CapturedFlow,
    FlowWriter,
    ResponseCache,
    TlsInfo,
    request_key,
)
from .inject import COLLECTOR_HOST, inject_tripwire
from .sites import SiteFarm
from .tlswire import peek_client_hello

TRIPWIRE_PLACEHOLDER = (
    b"// tripwire placeholder: replaced by the built frontend asset\n"
)


def now_ms() -> int:
    return int(time.time() * 1000)


class Collector:
    """Report intake on the reserved collector host."""

    def __init__(self, archive_dir: str | Path | None = None,
                 tripwire_asset: bytes | None = None) -> None:
        self.archive_dir = Path(archive_dir) if archive_dir else None
        self.tripwire_asset = tripwire_asset or TRIPWIRE_PLACEHOLDER
        self._lock = threading.Lock()
        self.dom_reports: list[dom.DomReport] = []
        self.probe_reports: list[webapi.ProbeReport] = []
        self.malformed: list[tuple[str, str, bytes]] = []   # (path, reason, raw)

    def reset(self, archive_dir: str | Path | None = None) -> None:
        with self._lock:
            self.dom_reports = []
            self.probe_reports = []
            self.malformed = []
            if archive_dir is not None:
                self.archive_dir = Path(archive_dir)

    def _archive_malformed(self, path: str, reason: str, raw: bytes) -> None:
        self.malformed.append((path, reason, raw))
        if self.archive_dir is not None:
            mdir = self.archive_dir / "malformed"
            mdir.mkdir(parents=True, exist_ok=True)
            n = len(self.malformed)
            (mdir / f"{n:04d}{path.replace('/', '_')}.bin").write_bytes(raw)
            (mdir / f"{n:04d}{path.replace('/', '_')}.reason.txt").write_text(reason + "\n", "utf-8")

    def handle(self, method: str, path: str, body: bytes) -> tuple[int, tuple, bytes]:
        plain = path.split("?", 1)[0]
        if method == "POST" and plain == "/report":
            return self._intake(path, body, dom.validate_report, self.dom_reports)
        if method == "POST" and plain == "/probe":
            return self._intake(path, body, webapi.validate_probe_report, self.probe_reports)
        if method in ("GET", "HEAD") and plain == "/tripwire.js":
            headers = (
                ("Content-Type", "application/javascript"),
                ("Content-Length", str(len(self.tripwire_asset))),
                ("Cache-Control", "no-store"),
            )
            return 200, headers, self.tripwire_asset if method == "GET" else b""
        if method in ("GET", "HEAD") and plain == "/health":
            return 200, (("Content-Type", "text/plain"), ("Content-Length", "3")), b"ok\n"
        return 404, (("Content-Type", "text/plain"), ("Content-Length", "10")), b"not found\n"

    def _intake(self, path: str, body: bytes, validator, sink: list) -> tuple[int, tuple, bytes]:
        try:
            obj = json.loads(body.decode("utf-8"))
            report = validator(obj)
        except (ValueError, UnicodeDecodeError) as exc:
            with self._lock:
                self._archive_malformed(path, str(exc), body)
            msg = f"bad report: {exc}\n".encode()
            return 400, (("Content-Type", "text/plain"), ("Content-Length", str(len(msg)))), msg
        with self._lock:
            sink.append(report)
        return 204, (("Content-Length", "0"),), b""


@dataclass
class SessionState:
    writer: FlowWriter | None = None
    mode: str = "record"              # record | replay
    cert_mode: str = "trusted"        # trusted | untrusted
    inject: bool = True
    replay_misses: list[str] = field(default_factory=list)
    injection_counts: dict[str, int] = field(default_factory=dict)


class Gateway:
    def __init__(
        self,
        farm: SiteFarm,
        cache: ResponseCache,
        trusted_ca: CertAuthority,
        untrusted_ca: CertAuthority,
        collector: Collector | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
    ) -> None:
        self.farm = farm
        self.cache = cache
        self.trusted_ca = trusted_ca
        self.untrusted_ca = untrusted_ca
        self.collector = collector or Collector()
        self.session = SessionState()
        self._state_lock = threading.Lock()
        self._httpd = ThreadingHTTPServer((host, port), _ProxyHandler)
        self._httpd.daemon_threads = True
        self._httpd.gateway = self          # type: ignore[attr-defined]
        self._http_thread: threading.Thread | None = None
        self._udp = _UdpListener(self, host)
        self._inflight = 0
        self._inflight_cv = threading.Condition()

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self._http_thread = threading.Thread(
            target=lambda: self._httpd.serve_forever(poll_interval=0.05), daemon=True
        )
        self._http_thread.start()
        self._udp.start()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._udp.stop()

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def udp_port(self) -> int:
        return self._udp.port

    def begin_session(self, writer: FlowWriter | None, mode: str, cert_mode: str = "trusted",
                      inject: bool = True) -> SessionState:
        state = SessionState(writer=writer, mode=mode, cert_mode=cert_mode, inject=inject)
        with self._state_lock:
            self.session = state
        return state

    def _enter_request(self) -> None:
        with self._inflight_cv:
            self._inflight += 1

    def _exit_request(self) -> None:
        with self._inflight_cv:
            self._inflight -= 1
            self._inflight_cv.notify_all()

    def quiesce(self, timeout: float = 5.0) -> bool:
        """Wait until no handler is mid-request; call before closing a writer.

        A client can observe a TLS failure while the server thread is still
        writing the aborted-handshake flow, so a session's log is complete
        only after the in-flight count drains.
        """
        deadline = time.monotonic() + timeout
        with self._inflight_cv:
            while self._inflight:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._inflight_cv.wait(remaining)
        return True

    # -- helpers used by the handler ----------------------------------------

    def authority(self) -> CertAuthority:
        return self.trusted_ca if self.session.cert_mode == "trusted" else self.untrusted_ca

    def log_flow(self, flow: CapturedFlow) -> None:
        writer = self.session.writer
        if writer is not None:
            writer.append(flow)

    def next_flow_id(self) -> str:
        writer = self.session.writer
        return writer.next_flow_id() if writer else "untracked:00000"

    def count_injection(self, reason: str) -> None:
        with self._state_lock:
            counts = self.session.injection_counts
            counts[reason] = counts.get(reason, 0) + 1


class _ProxyHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    # Attributes set once a CONNECT tunnel is established.
    _tls_host: str | None = None
    _tls_port: int = 443
    _tls_offered: tuple[str, ...] = ()
    _tls_socket: ssl.SSLSocket | None = None
    _tls_cert_mode: str = "trusted"

    def setup(self) -> None:
        super().setup()
        self.connection.settimeout(15)

    @property
    def gateway(self) -> Gateway:
        return self.server.gateway  # type: ignore[attr-defined]

    def log_message(self, fmt, *args) -> None:  # silence default stderr noise
        pass

    def handle_one_request(self) -> None:
        gw = self.gateway
        gw._enter_request()
        try:
            super().handle_one_request()
        finally:
            gw._exit_request()

    # -- CONNECT: TLS interception ------------------------------------------

    def do_CONNECT(self) -> None:
        gw = self.gateway
        host, _, port_s = self.path.rpartition(":")
        host = host or self.path
        port = int(port_s) if port_s.isdigit() else 443
        self.wfile.write(b"HTTP/1.1 200 Connection Established\r\n\r\n")
        self.wfile.flush()

        hello = peek_client_hello(self.connection, timeout=10)
        sni = hello.sni if hello and hello.sni else host.lower()
        offered = hello.ciphersuites if hello else ()
        cert_mode = gw.session.cert_mode
        ts0 = now_ms()
        try:
            ctx = gw.authority().server_context(sni)
            tls = ctx.wrap_socket(self.connection, server_side=True)
        except (ssl.SSLError, OSError):
            # Client refused the leaf (or sent junk): the aborted handshake
            # is still evidence, so it gets a flow of its own.
            gw.log_flow(CapturedFlow(
                flow_id=gw.next_flow_id(),
                session_id=gw.session.writer.session_id if gw.session.writer else "",
                ts_start=ts0,
                ts_end=now_ms(),
                method="",
                url=f"https://{sni}:{port}/" if port != 443 else f"https://{sni}/",
                tls=TlsInfo(
                    cert_mode=cert_mode,
                    handshake_completed=False,
                    ciphersuites_offered=offered,
                ),
                transport=TRANSPORT_TCP,
                intercepted=False,
            ))
            self.close_connection = True
            return

        self.connection = tls
        self.rfile = tls.makefile("rb", -1)
        self.wfile = tls.makefile("wb", 0)
        self._tls_host = sni
        self._tls_port = port
        self._tls_offered = offered
        self._tls_socket = tls
        self._tls_cert_mode = cert_mode
        self.close_connection = False

    # -- proxied requests -----------------------------------------------------

    def do_GET(self) -> None:
        self._proxy()

    do_POST = do_GET
    do_HEAD = do_GET
    do_PUT = do_GET
    do_DELETE = do_GET
    do_OPTIONS = do_GET
    do_PATCH = do_GET

    def _request_url(self) -> str | None:
        if self.path.startswith(("http://", "https://")):
            return self.path
        if self._tls_host is not None:
            host = (self.headers.get("Host") or self._tls_host).strip()
            if self._tls_port != 443 and ":" not in host:
                host = f"{host}:{self._tls_port}"
            return f"https://{host}{self.path}"
        return None

    def _read_body(self) -> bytes:
        te = (self.headers.get("Transfer-Encoding") or "").lower()
        if "chunked" in te:
            chunks = []
            while True:
                line = self.rfile.readline(65536)
                try:
                    size = int(line.strip().split(b";")[0], 16)
                except ValueError:
                    break
                if size == 0:
                    self.rfile.readline(65536)
                    break
                chunks.append(self.rfile.read(size))
                self.rfile.read(2)
            return b"".join(chunks)
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length > 0 else b""

    def _send(self, status: int, headers, body: bytes, send_body: bool = True) -> None:
        self.send_response_only(status)
        seen_length = False
        for k, v in headers:
            if k.lower() == "content-length":
                seen_length = True
            self.send_header(k, v)
        if not seen_length:
            self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if send_body and body:
            self.wfile.write(body)
        self.wfile.flush()

    def _tls_info(self) -> TlsInfo | None:
        if self._tls_socket is None:
            return None
        cipher = self._tls_socket.cipher()
        return TlsInfo(
            cert_mode=self._tls_cert_mode,
            handshake_completed=True,
            version=self._tls_socket.version(),
            ciphersuites_offered=self._tls_offered,
            cipher_negotiated=cipher[0] if cipher else None,
        )

    def _proxy(self) -> None:
        gw = self.gateway
        url = self._request_url()
        if url is None:
            self._send(400, (("Content-Type", "text/plain"),), b"proxy requests only\n")
            return
        ts0 = now_ms()
        body = self._read_body()
        parts = urlsplit(url)
        host = (parts.hostname or "").lower()
        req_headers = tuple((k, v) for k, v in self.headers.items())
        method = self.command.upper()

        if host == COLLECTOR_HOST:
            status, headers, payload = gw.collector.handle(method, parts.path + (f"?{parts.query}" if parts.query else ""), body)
        else:
            status, headers, payload = self._origin_response(gw, method, url, parts)
            if gw.session.inject:
                result = inject_tripwire(tuple(headers), payload)
                gw.count_injection(result.reason)
                headers, payload = result.headers, result.body

        send_body = method != "HEAD"
        # logged before the bytes go out: a response the client saw is
        # guaranteed to be in the flow log already
        gw.log_flow(CapturedFlow(
            flow_id=gw.next_flow_id(),
            session_id=gw.session.writer.session_id if gw.session.writer else "",
            ts_start=ts0,
            ts_end=now_ms(),
            method=method,
            url=url,
            request_headers=req_headers,
            request_body=body,
            response_headers=tuple(headers),
            response_body=payload if send_body else b"",
            status=status,
            tls=self._tls_info(),
            transport=TRANSPORT_TCP,
            intercepted=True,
        ))
        try:
            self._send(status, headers, payload, send_body=send_body)
        except (BrokenPipeError, ConnectionResetError, ssl.SSLError, socket.timeout):
            self.close_connection = True

    def _origin_response(self, gw: Gateway, method: str, url: str, parts) -> tuple[int, tuple, bytes]:
        key = request_key(method, url)
        cached = gw.cache.lookup(key)
        if cached is not None:
            return cached.status, cached.headers, cached.body
        if gw.session.mode == "replay":
            gw.session.replay_misses.append(key)
            body = b"gauntlet replay miss\n"
            headers = (
                ("Content-Type", "text/plain"),
                ("X-Gauntlet-Replay-Miss", "1"),
                ("Content-Length", str(len(body))),
            )
            return 504, headers, body
        host = (parts.hostname or "").lower()
        path = parts.path or "/"
        if parts.query:
            path += f"?{parts.query}"
        status, headers, payload = gw.farm.respond(method, host, path, parts.scheme)
        gw.cache.store(key, CachedResponse(status=status, headers=tuple(headers), body=payload))
        return status, headers, payload


# -- UDP: drop everything except DNS ------------------------------------------

def _dns_question(data: bytes) -> str | None:
    """Extract the first query name from a DNS packet, or None."""
    try:
        if len(data) < 17:
            return None
        flags = struct.unpack(">H", data[2:4])[0]
        if flags & 0x8000:  # a response, not a query
            return None
        qdcount = struct.unpack(">H", data[4:6])[0]
        if qdcount < 1:
            return None
        labels = []
        pos = 12
        while True:
            n = data[pos]
            if n == 0:
                pos += 1
                break
            if n > 63:
                return None
            labels.append(data[pos + 1:pos + 1 + n].decode("ascii"))
            pos += 1 + n
        if pos + 4 > len(data) or not labels:
            return None
        return ".".join(labels)
    except (IndexError, UnicodeDecodeError):
        return None


def _dns_answer(query: bytes, address: str = "127.0.0.1") -> bytes:
    """Minimal A-record answer pointing at the testbed."""
    tid = query[:2]
    header = tid + b"\x81\x80" + query[4:6] + query[4:6] + b"\x00\x00\x00\x00"
    # echo the question section verbatim
    pos = 12
    while query[pos] != 0:
        pos += 1 + query[pos]
    question = query[12:pos + 5]
    answer = (
        b"\xc0\x0c"                # pointer to the question name
        + b"\x00\x01\x00\x01"      # type A, class IN
        + b"\x00\x00\x00\x3c"      # ttl 60
        + b"\x00\x04"
        + socket.inet_aton(address)
    )
    return header + question + answer


class _UdpListener:
    """Models the gateway's UDP policy: answer DNS, drop the rest."""

    def __init__(self, gateway: Gateway, host: str) -> None:
        self.gateway = gateway
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((host, 0))
        self.sock.settimeout(0.05)
        self.port = self.sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2)
        self.sock.close()

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                data, addr = self.sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            gw = self.gateway
            gw._enter_request()
            try:
                ts = now_ms()
                qname = _dns_question(data)
                if qname is not None:
                    # DNS reveals the intended destination even though the
                    # eventual connection must come back through the proxy.
                    # Logged before the answer goes out, like every flow.
                    gw.log_flow(CapturedFlow(
                        flow_id=gw.next_flow_id(),
                        session_id=gw.session.writer.session_id if gw.session.writer else "",
                        ts_start=ts,
                        ts_end=now_ms(),
                        method="",
                        url=f"http://{qname}/",
                        transport=TRANSPORT_UDP_DNS,
                        intercepted=False,
                    ))
                    try:
                        self.sock.sendto(_dns_answer(data), addr)
                    except OSError:
                        pass
                else:
                    gw.log_flow(CapturedFlow(
                        flow_id=gw.next_flow_id(),
                        session_id=gw.session.writer.session_id if gw.session.writer else "",
                        ts_start=ts,
                        ts_end=ts,
                        method="",
                        url=f"https://{addr[0]}:{addr[1]}/",
                        transport=TRANSPORT_UDP_DROPPED,
                        intercepted=False,
                    ))
            finally:
                gw._exit_request()
