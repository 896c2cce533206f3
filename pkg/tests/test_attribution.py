"""Referrer attribution, checked against a brute-force path search."""

import random

from hypothesis import given, settings
from hypothesis import strategies as st

from gauntlet.attribution import (
    attribute_engine,
    attribute_flows,
    blocking_credit,
    detect_allowed_tracking,
    resource_type_for,
    subject_initiated,
)
from gauntlet.filters import FilterSet
from gauntlet.flows import CapturedFlow


def flow(fid, url, ts, referer=None, method="GET", headers=()):
    hdrs = tuple(headers) + ((("Referer", referer),) if referer else ())
    return CapturedFlow(
        flow_id=fid, session_id="s", ts_start=ts, ts_end=ts + 1,
        method=method, url=url, request_headers=hdrs, status=200,
    )


def brute_force_pages(flows, roots):
    """Independent oracle: recursive earliest-attribution definition.

    A root URL is attributed at its first fetch. Any other URL is
    attributed by the earliest flow whose referrer URL was attributed
    strictly before that flow; its page is the referrer's page. A flow
    ordered before its URL's attribution point stays unattributed. The
    minimal chain never revisits a URL, so cycle pruning loses nothing.
    """
    ordered = sorted(flows, key=lambda f: (f.ts_start, f.flow_id))
    memo = {}

    def attr(url, seen):
        if url in memo:
            return memo[url]
        result = None
        if url in roots:
            for i, f in enumerate(ordered):
                if f.url == url:
                    result = (i, url)
                    break
        else:
            for i, f in enumerate(ordered):
                if f.url != url:
                    continue
                ref = f.header("referer")
                if not ref or ref == url or ref in seen:
                    continue
                upstream = attr(ref, seen | {url})
                if upstream is not None and upstream[0] < i:
                    if result is None or i < result[0]:
                        result = (i, upstream[1])
        if not seen:
            # results computed under cycle pruning may be degraded
            # for this context only; never cache those
            memo[url] = result
        return result

    pages = {}
    for i, f in enumerate(ordered):
        a = attr(f.url, frozenset())
        if a is not None and i >= a[0]:
            pages[f.flow_id] = a[1]
    return pages


def test_root_attributes_to_itself():
    flows = [flow("f1", "https://page.test/", 1)]
    result = attribute_flows(flows, ["https://page.test/"])
    assert result.page_of == {"f1": "https://page.test/"}
    assert result.unattributed == []


def test_chain_through_referer():
    flows = [
        flow("f1", "https://page.test/", 1),
        flow("f2", "https://cdn.test/a.js", 2, referer="https://page.test/"),
        flow("f3", "https://tracker.test/px.gif", 3, referer="https://cdn.test/a.js"),
    ]
    result = attribute_flows(flows, ["https://page.test/"])
    assert result.page_of["f2"] == "https://page.test/"
    assert result.page_of["f3"] == "https://page.test/"


def test_earliest_referrer_wins():
    flows = [
        flow("f1", "https://a.test/", 1),
        flow("f2", "https://b.test/", 2),
        flow("f3", "https://shared.test/lib.js", 3, referer="https://a.test/"),
        flow("f4", "https://shared.test/lib.js", 4, referer="https://b.test/"),
    ]
    result = attribute_flows(flows, ["https://a.test/", "https://b.test/"])
    assert result.page_of["f3"] == "https://a.test/"
    # the refetch keeps the original page assignment
    assert result.page_of["f4"] == "https://a.test/"


def test_self_loop_referer_is_ignored():
    flows = [flow("f1", "https://orphan.test/x", 5, referer="https://orphan.test/x")]
    result = attribute_flows(flows, ["https://page.test/"])
    assert result.page_of == {}
    assert [f.flow_id for f in result.unattributed] == ["f1"]


def test_forward_reference_does_not_attribute():
    # referer names a URL that only appears later: no time travel
    flows = [
        flow("f1", "https://late.test/a.js", 1, referer="https://page.test/"),
        flow("f2", "https://page.test/", 2),
    ]
    result = attribute_flows(flows, ["https://page.test/"])
    assert "f1" not in result.page_of
    assert result.page_of["f2"] == "https://page.test/"


def test_subject_initiated_excludes_plumbing():
    flows = [
        flow("f1", "https://page.test/", 1),
        flow("f2", "https://datasink.example/collect", 2, method="POST"),
        flow("f3", "http://collector.gauntlet.invalid/report", 3, method="POST"),
        flow("f4", "https://h.test/", 4, method=""),   # aborted handshake
    ]
    initiated = subject_initiated(flows, ["https://page.test/"])
    assert [f.flow_id for f in initiated] == ["f2"]


def _random_case(rng):
    n_pages = rng.randint(1, 3)
    roots = [f"https://root{i}.test/" for i in range(n_pages)]
    urls = roots + [f"https://node{i}.test/r" for i in range(rng.randint(0, 7))]
    flows = []
    ts = 0
    for i in range(rng.randint(1, 10)):
        ts += rng.randint(1, 3)
        url = rng.choice(urls)
        referer = rng.choice([None] + urls)
        flows.append(flow(f"f{i:03d}", url, ts, referer=referer))
    return flows, roots


def test_attribution_matches_brute_force_on_random_graphs():
    rng = random.Random(0xA77E)
    for _ in range(300):
        flows, roots = _random_case(rng)
        got = attribute_flows(flows, roots).page_of
        want = brute_force_pages(flows, set(roots))
        assert got == want, (flows, roots)


@given(st.data())
@settings(max_examples=150, deadline=None)
def test_attribution_matches_brute_force_property(data):
    n_urls = data.draw(st.integers(1, 8))
    urls = [f"https://u{i}.test/" for i in range(n_urls)]
    roots = set(data.draw(st.lists(st.sampled_from(urls), max_size=3, unique=True)))
    n_flows = data.draw(st.integers(1, 10))
    flows = []
    ts = 0
    for i in range(n_flows):
        ts += data.draw(st.integers(1, 2))
        url = data.draw(st.sampled_from(urls))
        referer = data.draw(st.one_of(st.none(), st.sampled_from(urls)))
        flows.append(flow(f"f{i:03d}", url, ts, referer=referer))
    assert attribute_flows(flows, sorted(roots)).page_of == brute_force_pages(flows, roots)


# -- tracking detection ------------------------------------------------------------

FILTER_TEXT = """\
||tracker.example^
||ads.fixture.example^$script
"""


def _filters():
    fs = FilterSet()
    fs.add_text(FILTER_TEXT, origin="test")
    return fs


def test_detect_allowed_tracking_flags_page_attributed_fetches():
    flows = [
        flow("f1", "https://page.test/", 1),
        flow("f2", "https://tracker.example/px.gif", 2, referer="https://page.test/"),
        flow("f3", "https://clean.example/app.js", 3, referer="https://page.test/"),
        flow("f4", "https://tracker.example/bg.gif", 4),   # unattributed: not page-driven
    ]
    attribution = attribute_flows(flows, ["https://page.test/"])
    uses = detect_allowed_tracking(flows, attribution, _filters())
    assert [u.flow_id for u in uses] == ["f2"]
    assert uses[0].page_url == "https://page.test/"
    assert uses[0].rule


def test_blocking_credit_requires_opportunity_and_restraint():
    listed = ["https://tracker.example/px.gif"]
    page = "https://page.test/"
    filters = _filters()

    withheld = [
        flow("f1", page, 1),
        flow("f2", "https://clean.example/app.js", 2, referer=page),
    ]
    fetched = withheld + [flow("f3", listed[0], 3, referer=page)]
    no_visit = [flow("f1", "https://other.test/", 1)]
    lazy = [flow("f1", page, 1)]   # visited but loaded nothing

    assert blocking_credit(withheld, attribute_flows(withheld, [page]), filters, page, listed)
    assert not blocking_credit(fetched, attribute_flows(fetched, [page]), filters, page, listed)
    assert not blocking_credit(no_visit, attribute_flows(no_visit, ["https://other.test/"]), filters, page, listed)
    assert not blocking_credit(lazy, attribute_flows(lazy, [page]), filters, page, listed)


def test_resource_type_for_extensions():
    assert resource_type_for("https://x.test/a.js") == "script"
    assert resource_type_for("https://x.test/a.css?v=1") == "stylesheet"
    assert resource_type_for("https://x.test/p.PNG") == "image"
    assert resource_type_for("https://x.test/frame.html") == "subdocument"
    assert resource_type_for("https://x.test/api/data") == "other"
    assert resource_type_for("https://x.test/file.woff2") == "other"


def test_attribute_engine_webview_detection():
    urls = ["https://page.test/"]
    tagged = [flow("f1", urls[0], 1, headers=[("X-Requested-With", "com.app")])]
    untagged = [flow("f1", urls[0], 1)]
    mixed = tagged + [flow("f2", urls[0], 2)]
    assert attribute_engine(tagged, urls, "com.app") == "webview"
    assert attribute_engine(untagged, urls, "com.app") == "external-or-mixed"
    assert attribute_engine(mixed, urls, "com.app") == "external-or-mixed"
    assert attribute_engine([], urls, "com.app") == "unknown"
