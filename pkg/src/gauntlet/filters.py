"""Request-blocking filter engine over adblock-style list syntax.

Supports the URL-filter subset that request interception can act on:
anchors (``||``, ``|``), wildcards, ``^`` separators, ``@@`` exceptions,
and the options third-party, resource types, and ``domain=``. Everything
else (element hiding, regex rules, rewrite/csp options) is skipped and
counted, never guessed at.

Two matching routes are kept deliberately: a naive linear scan over every
rule, and a host-keyed index that prunes candidates before running the
same per-rule matcher. ``decide`` uses the index; ``decide_naive`` is the
reference. They must agree on every input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

from .psl import is_third_party, normalize_host

SEPARATOR_CHARS = "/:?=&"

RESOURCE_TYPES = frozenset(
    {"script", "image", "stylesheet", "xmlhttprequest", "subdocument", "other"}
)

_BUNDLED_LISTS = (
    "easylist_snapshot.txt",
    "easyprivacy_snapshot.txt",
    "testbed_fixtures.txt",
)


class UnsupportedRule(ValueError):
    """Raised by the compiler for list syntax the engine does not implement."""


_REGEX_HINT_CHARS = frozenset("\\[]{}()+?")


@dataclass(frozen=True)
class FilterRule:
    raw: str
    index: int
    exception: bool
    anchor: str                      # 'none' | 'start' | 'domain'
    end_anchor: bool
    atoms: tuple[tuple, ...]         # ('lit', s) | ('sep',) | ('star',)
    third_party: bool | None         # None = either
    types: frozenset[str] | None     # None = all types
    include_domains: tuple[str, ...]
    exclude_domains: tuple[str, ...]

    def applies_to(self, page_host: str, third_party: bool, resource_type: str) -> bool:
        if self.types is not None and resource_type not in self.types:
            return False
        if self.third_party is not None and third_party != self.third_party:
            return False
        if self.exclude_domains and _host_in(page_host, self.exclude_domains):
            return False
        if self.include_domains and not _host_in(page_host, self.include_domains):
            return False
        return True

    def matches_url(self, url_lower: str) -> bool:
        if self.anchor == "start":
            return _match_atoms(self.atoms, 0, url_lower, 0, self.end_anchor)
        if self.anchor == "domain":
            for pos in _domain_anchor_positions(url_lower):
                if _match_atoms(self.atoms, 0, url_lower, pos, self.end_anchor):
                    return True
            return False
        # Unanchored: a leading literal bounds the candidate positions.
        if self.atoms and self.atoms[0][0] == "lit":
            lit = self.atoms[0][1]
            pos = url_lower.find(lit)
            while pos != -1:
                if _match_atoms(self.atoms, 1, url_lower, pos + len(lit), self.end_anchor):
                    return True
                pos = url_lower.find(lit, pos + 1)
            return False
        for pos in range(len(url_lower) + 1):
            if _match_atoms(self.atoms, 0, url_lower, pos, self.end_anchor):
                return True
        return False


def _host_in(host: str, domains: tuple[str, ...]) -> bool:
    for d in domains:
        if host == d or host.endswith("." + d):
            return True
    return False


def _domain_anchor_positions(text: str) -> list[int]:
    i = text.find("://")
    if i == -1:
        return []
    start = i + 3
    end = len(text)
    for ch in "/?#":
        j = text.find(ch, start)
        if j != -1:
            end = min(end, j)
    positions = [start]
    for k in range(start, end):
        if text[k] == ".":
            positions.append(k + 1)
    return positions


def _match_atoms(atoms: tuple, i: int, text: str, pos: int, end_anchor: bool) -> bool:
    if i == len(atoms):
        return pos == len(text) if end_anchor else True
    kind = atoms[i][0]
    if kind == "lit":
        lit = atoms[i][1]
        if text.startswith(lit, pos):
            return _match_atoms(atoms, i + 1, text, pos + len(lit), end_anchor)
        return False
    if kind == "sep":
        if pos < len(text) and text[pos] in SEPARATOR_CHARS:
            if _match_atoms(atoms, i + 1, text, pos + 1, end_anchor):
                return True
        # ^ also matches zero-width at the end of the URL.
        if pos == len(text):
            return _match_atoms(atoms, i + 1, text, pos, end_anchor)
        return False
    # star: consecutive stars are collapsed at compile time, so try all spans
    if i + 1 == len(atoms):
        return True
    for p in range(pos, len(text) + 1):
        if _match_atoms(atoms, i + 1, text, p, end_anchor):
            return True
    return False


_TYPE_NEGATIONS = frozenset("~" + t for t in RESOURCE_TYPES)


def compile_rule(raw: str, index: int = 0) -> FilterRule:
    """Compile one list line into a rule, or raise UnsupportedRule."""
    line = raw.strip()
    if "##" in line or "#@#" in line or "#?#" in line:
        raise UnsupportedRule("element-hiding")

    exception = line.startswith("@@")
    if exception:
        line = line[2:]

    pattern, options = line, []
    if "$" in line:
        head, tail = line.rsplit("$", 1)
        tokens = [t.strip() for t in tail.split(",")] if tail else []
        if tokens and all(_looks_like_option(t) for t in tokens):
            pattern, options = head, tokens

    # Slash-delimited regex rules, distinguished from plain path patterns
    # like /adserver/ by the presence of regex-only metacharacters.
    if (
        len(pattern) > 2
        and pattern.startswith("/")
        and pattern.endswith("/")
        and any(ch in _REGEX_HINT_CHARS for ch in pattern[1:-1])
    ):
        raise UnsupportedRule("regex-rule")

    third_party: bool | None = None
    include_types: set[str] = set()
    exclude_types: set[str] = set()
    include_domains: list[str] = []
    exclude_domains: list[str] = []
    for tok in options:
        tl = tok.lower()
        if tl == "third-party":
            third_party = True
        elif tl == "~third-party":
            third_party = False
        elif tl in RESOURCE_TYPES:
            include_types.add(tl)
        elif tl in _TYPE_NEGATIONS:
            exclude_types.add(tl[1:])
        elif tl.startswith("domain="):
            for d in tl[len("domain="):].split("|"):
                d = d.strip()
                if not d:
                    continue
                if d.startswith("~"):
                    exclude_domains.append(d[1:])
                else:
                    include_domains.append(d)
            if not include_domains and not exclude_domains:
                raise UnsupportedRule("option:domain=")
        else:
            raise UnsupportedRule(f"option:{tok}")

    if include_types:
        types: frozenset[str] | None = frozenset(include_types - exclude_types)
    elif exclude_types:
        types = RESOURCE_TYPES - exclude_types
    else:
        types = None

    pattern = pattern.lower()
    anchor = "none"
    if pattern.startswith("||"):
        anchor = "domain"
        pattern = pattern[2:]
    elif pattern.startswith("|"):
        anchor = "start"
        pattern = pattern[1:]
    end_anchor = pattern.endswith("|")
    if end_anchor:
        pattern = pattern[:-1]
    if "|" in pattern:
        raise UnsupportedRule("embedded-pipe")

    atoms: list[tuple] = []
    lit: list[str] = []
    for ch in pattern:
        if ch == "*":
            if lit:
                atoms.append(("lit", "".join(lit)))
                lit = []
            if not atoms or atoms[-1] != ("star",):
                atoms.append(("star",))
        elif ch == "^":
            if lit:
                atoms.append(("lit", "".join(lit)))
                lit = []
            atoms.append(("sep",))
        else:
            lit.append(ch)
    if lit:
        atoms.append(("lit", "".join(lit)))

    if not atoms and anchor == "none" and not options:
        raise UnsupportedRule("empty-pattern")

    return FilterRule(
        raw=raw,
        index=index,
        exception=exception,
        anchor=anchor,
        end_anchor=end_anchor,
        atoms=tuple(atoms),
        third_party=third_party,
        types=types,
        include_domains=tuple(include_domains),
        exclude_domains=tuple(exclude_domains),
    )


def _looks_like_option(tok: str) -> bool:
    tok = tok.strip().lstrip("~")
    if not tok:
        return False
    name = tok.split("=", 1)[0]
    return name.replace("-", "").isalpha()


def _index_key(rule: FilterRule) -> str | None:
    """Complete-label host key for a domain-anchored rule, else None.

    The key must be a full suffix of any matching host, otherwise the
    suffix-walk lookup could miss the rule and the index would disagree
    with the naive scan.
    """
    if rule.anchor != "domain" or not rule.atoms or rule.atoms[0][0] != "lit":
        return None
    lit = rule.atoms[0][1]
    cut = len(lit)
    for stop in "/:":
        j = lit.find(stop)
        if j != -1:
            cut = min(cut, j)
    host_part = lit[:cut]
    if cut == len(lit):
        # Literal is all host characters: the host ends here only if the
        # next atom is a separator, or the pattern ends at the URL end.
        nxt = rule.atoms[1] if len(rule.atoms) > 1 else None
        if nxt is None and not rule.end_anchor:
            return None
        if nxt is not None and nxt[0] != "sep":
            return None
    if not host_part or host_part.startswith(".") or host_part.endswith(".") or ".." in host_part:
        return None
    return host_part


@dataclass(frozen=True)
class FilterDecision:
    blocked: bool
    rule: FilterRule | None = None        # first-listed matching block rule
    exception: FilterRule | None = None   # first-listed matching exception


@dataclass
class ListStats:
    origin: str
    total_lines: int = 0
    comments: int = 0
    blanks: int = 0
    parsed: int = 0
    unsupported: list[tuple[int, str, str]] = field(default_factory=list)

    @property
    def unsupported_rate(self) -> float:
        rules = self.parsed + len(self.unsupported)
        return len(self.unsupported) / rules if rules else 0.0


class FilterSet:
    """Ordered collection of compiled rules with an indexed and a naive matcher."""

    def __init__(self) -> None:
        self._rules: list[FilterRule] = []
        self._by_host: dict[str, list[FilterRule]] = {}
        self._general: list[FilterRule] = []
        self.stats: list[ListStats] = []

    def __len__(self) -> int:
        return len(self._rules)

    @property
    def rules(self) -> tuple[FilterRule, ...]:
        return tuple(self._rules)

    def add_rule(self, rule: FilterRule) -> None:
        self._rules.append(rule)
        key = _index_key(rule)
        if key is None:
            self._general.append(rule)
        else:
            self._by_host.setdefault(key, []).append(rule)

    def add_text(self, text: str, origin: str = "<memory>") -> ListStats:
        stats = ListStats(origin=origin)
        for lineno, raw in enumerate(text.splitlines(), start=1):
            stats.total_lines += 1
            line = raw.strip()
            if not line:
                stats.blanks += 1
                continue
            if line.startswith("!") or (line.startswith("[") and line.endswith("]")):
                stats.comments += 1
                continue
            try:
                rule = compile_rule(line, index=len(self._rules))
            except UnsupportedRule as exc:
                stats.unsupported.append((lineno, str(exc), line))
                continue
            self.add_rule(rule)
            stats.parsed += 1
        self.stats.append(stats)
        return stats

    def _candidates(self, url: str):
        seen = self._general
        host = normalize_host(url)
        if not host:
            return seen
        out = list(seen)
        parts = host.split(".")
        for i in range(len(parts)):
            bucket = self._by_host.get(".".join(parts[i:]))
            if bucket:
                out.extend(bucket)
        return out

    @staticmethod
    def _pick(rules, url_lower: str, page_host: str, third: bool, resource_type: str) -> FilterDecision:
        best_block: FilterRule | None = None
        best_exc: FilterRule | None = None
        for rule in rules:
            if rule.exception:
                if best_exc is not None and rule.index > best_exc.index:
                    continue
            elif best_block is not None and rule.index > best_block.index:
                continue
            if not rule.applies_to(page_host, third, resource_type):
                continue
            if not rule.matches_url(url_lower):
                continue
            if rule.exception:
                best_exc = rule
            else:
                best_block = rule
        if best_exc is not None:
            return FilterDecision(blocked=False, rule=best_block, exception=best_exc)
        return FilterDecision(blocked=best_block is not None, rule=best_block)

    def _context(self, url: str, page_url: str | None):
        page_host = normalize_host(page_url) if page_url else ""
        third = is_third_party(url, page_url) if page_url else False
        return url.lower(), page_host, third

    def decide(self, url: str, page_url: str | None = None, resource_type: str = "other") -> FilterDecision:
        url_lower, page_host, third = self._context(url, page_url)
        return self._pick(self._candidates(url), url_lower, page_host, third, resource_type)

    def decide_naive(self, url: str, page_url: str | None = None, resource_type: str = "other") -> FilterDecision:
        url_lower, page_host, third = self._context(url, page_url)
        return self._pick(self._rules, url_lower, page_host, third, resource_type)


def load_bundled(names: tuple[str, ...] = _BUNDLED_LISTS) -> FilterSet:
    fs = FilterSet()
    for name in names:
        text = (resources.files("gauntlet.data") / name).read_text("utf-8")
        fs.add_text(text, origin=name)
    return fs
