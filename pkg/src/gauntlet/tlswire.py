"""ClientHello inspection.

The gateway peeks at the first TLS record before wrapping the socket, so
the offered cipher suites and SNI are captured even when the handshake
later fails. Parsing is defensive: anything malformed yields None rather
than an exception, because subjects are allowed to send garbage.
"""

from __future__ import annotations

import socket
import struct
import time
from dataclasses import dataclass

_RECORD_HEADER = 5
_HANDSHAKE_CLIENT_HELLO = 0x01
_CONTENT_HANDSHAKE = 0x16
_EXT_SNI = 0x0000

_VERSION_NAMES = {
    0x0301: "TLSv1.0",
    0x0302: "TLSv1.1",
    0x0303: "TLSv1.2",
    0x0304: "TLSv1.3",
}


@dataclass(frozen=True)
class ClientHelloInfo:
    client_version: str
    ciphersuites: tuple[str, ...]   # IANA code points as '0xNNNN'
    sni: str | None


def parse_client_hello(data: bytes) -> ClientHelloInfo | None:
    try:
        if len(data) < _RECORD_HEADER or data[0] != _CONTENT_HANDSHAKE:
            return None
        record_len = struct.unpack(">H", data[3:5])[0]
        body = data[_RECORD_HEADER:_RECORD_HEADER + record_len]
        if len(body) < 4 or body[0] != _HANDSHAKE_CLIENT_HELLO:
            return None
        hs_len = int.from_bytes(body[1:4], "big")
        hello = body[4:4 + hs_len]
        pos = 0
        client_version = struct.unpack(">H", hello[pos:pos + 2])[0]
        pos += 2 + 32  # version + random
        sid_len = hello[pos]
        pos += 1 + sid_len
        cs_len = struct.unpack(">H", hello[pos:pos + 2])[0]
        pos += 2
        suites = []
        for off in range(pos, pos + cs_len, 2):
            code = struct.unpack(">H", hello[off:off + 2])[0]
            suites.append(f"0x{code:04X}")
        pos += cs_len
        comp_len = hello[pos]
        pos += 1 + comp_len
        sni = None
        if pos + 2 <= len(hello):
            ext_total = struct.unpack(">H", hello[pos:pos + 2])[0]
            pos += 2
            end = min(pos + ext_total, len(hello))
            while pos + 4 <= end:
                ext_type, ext_len = struct.unpack(">HH", hello[pos:pos + 4])
                pos += 4
                if ext_type == _EXT_SNI and ext_len >= 5:
                    ext = hello[pos:pos + ext_len]
                    # server_name_list length (2), type (1), name length (2)
                    name_len = struct.unpack(">H", ext[3:5])[0]
                    raw_name = ext[5:5 + name_len]
                    try:
                        sni = raw_name.decode("idna")
                    except UnicodeError:
                        sni = raw_name.decode("ascii", "replace")
                pos += ext_len
        return ClientHelloInfo(
            client_version=_VERSION_NAMES.get(client_version, f"0x{client_version:04X}"),
            ciphersuites=tuple(suites),
            sni=sni,
        )
    except (IndexError, struct.error, UnicodeError):
        return None


def peek_client_hello(sock: socket.socket, timeout: float = 5.0) -> ClientHelloInfo | None:
    """Read the first TLS record with MSG_PEEK, leaving it in the buffer."""
    old = sock.gettimeout()
    sock.settimeout(timeout)
    deadline = time.monotonic() + timeout
    try:
        head = sock.recv(_RECORD_HEADER, socket.MSG_PEEK)
        if len(head) < _RECORD_HEADER or head[0] != _CONTENT_HANDSHAKE:
            return None
        want = _RECORD_HEADER + struct.unpack(">H", head[3:5])[0]
        # A peek returns only what is buffered; poll until the record is whole.
        while True:
            data = sock.recv(want, socket.MSG_PEEK)
            if not data:
                return None
            if len(data) >= want or time.monotonic() > deadline:
                return parse_client_hello(data)
            time.sleep(0.01)
    except (socket.timeout, OSError):
        return None
    finally:
        sock.settimeout(old)
