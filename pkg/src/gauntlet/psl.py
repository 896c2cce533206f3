"""Effective-TLD computation against the bundled public-suffix snapshot.

Site identity (eTLD+1) drives third-party classification everywhere in the
testbed, so lookups are pure functions of the pinned snapshot file and never
touch the network.
"""

from __future__ import annotations

import ipaddress
from functools import lru_cache
from importlib import resources
from urllib.parse import urlsplit

_SNAPSHOT_RESOURCE = "public_suffix_snapshot.dat"


def _load_rules(path: str | None = None) -> tuple[frozenset[str], frozenset[str], frozenset[str]]:
    if path is None:
        text = (resources.files("gauntlet.data") / _SNAPSHOT_RESOURCE).read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    exact, wildcard, exception = set(), set(), set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("//"):
            continue
        if line.startswith("!"):
            exception.add(line[1:])
        elif line.startswith("*."):
            wildcard.add(line[2:])
        else:
            exact.add(line)
    return frozenset(exact), frozenset(wildcard), frozenset(exception)


class SuffixTable:
    """Public-suffix rules loaded from one snapshot file."""

    def __init__(self, path: str | None = None) -> None:
        self.exact, self.wildcard, self.exception = _load_rules(path)

    def public_suffix(self, host: str) -> str:
        """Longest matching public suffix of ``host`` (default rule: last label)."""
        labels = host.split(".")
        best = labels[-1]
        for i in range(len(labels)):
            candidate = ".".join(labels[i:])
            if candidate in self.exception:
                # Exception rule: the suffix is the candidate minus its first label.
                return ".".join(labels[i + 1:])
            if candidate in self.exact and len(candidate) > len(best):
                best = candidate
            if i > 0 and ".".join(labels[i:]) in self.wildcard:
                wc = ".".join(labels[i - 1:])
                if len(wc) > len(best):
                    best = wc
        return best

    def etld_plus_one(self, host: str) -> str | None:
        """eTLD+1 of a hostname, or None when the host is itself a suffix.

        IP literals are their own site identity.
        """
        host = normalize_host(host)
        if not host:
            return None
        try:
            ipaddress.ip_address(host)
            return host
        except ValueError:
            pass
        suffix = self.public_suffix(host)
        if host == suffix:
            return None
        prefix = host[: -(len(suffix) + 1)]
        return prefix.rsplit(".", 1)[-1] + "." + suffix


_default_table: SuffixTable | None = None


def default_table() -> SuffixTable:
    global _default_table
    if _default_table is None:
        _default_table = SuffixTable()
    return _default_table


def normalize_host(url_or_host: str) -> str:
    """Lowercased bare hostname from a URL or host[:port] string."""
    value = (url_or_host or "").strip().lower()
    if "://" in value:
        value = urlsplit(value).netloc
    value = value.rsplit("@", 1)[-1]
    if value.startswith("["):  # IPv6 literal
        return value.partition("]")[0].lstrip("[")
    return value.split(":", 1)[0].rstrip(".")


@lru_cache(maxsize=4096)
def etld_plus_one(url_or_host: str) -> str | None:
    host = normalize_host(url_or_host)
    if not host:
        return None
    return default_table().etld_plus_one(host) or host


def same_site(a: str, b: str) -> bool:
    """True when two URLs/hosts share an eTLD+1."""
    ea, eb = etld_plus_one(a), etld_plus_one(b)
    return ea is not None and ea == eb


def is_third_party(request_url: str, page_origin: str) -> bool:
    """Third-party iff the request eTLD+1 differs from the page's eTLD+1."""
    return not same_site(request_url, page_origin)
