"""Element extraction, digest recipes, report validation, and diffing."""

import hashlib

import pytest

from gauntlet.dom import (
    DomDiff,
    ReportedElement,
    attrs_digest,
    diff,
    extract_elements,
    inline_digest,
    validate_report,
)

PAGE = "https://honeypage.test/"


def test_attrs_digest_recipe():
    # Exact recipe: name=value lines, sorted by lowercased name, sha256 hex.
    attrs = [("src", "/a.js"), ("async", None), ("DATA-X", "1")]
    expected = hashlib.sha256("async=\nDATA-X=1\nsrc=/a.js".encode()).hexdigest()
    assert attrs_digest(attrs) == expected


def test_attrs_digest_order_insensitive():
    a = attrs_digest([("a", "1"), ("b", "2")])
    b = attrs_digest([("b", "2"), ("a", "1")])
    assert a == b


def test_inline_digest_is_sha256_of_text():
    assert inline_digest("var x=1;") == hashlib.sha256(b"var x=1;").hexdigest()


def test_extract_scripts_and_links():
    html = (
        '<html><head>'
        '<link rel="stylesheet" href="/style.css">'
        '<script src="https://cdn.example/lib.js" defer></script>'
        '</head><body>'
        '<script>inline();</script>'
        '<img src="/pic.png">'
        '</body></html>'
    )
    els = extract_elements(PAGE, html)
    assert [e.tag for e in els] == ["link", "script", "script"]
    assert els[0].url == "https://honeypage.test/style.css"   # resolved absolute
    assert els[1].url == "https://cdn.example/lib.js"
    assert els[2].url is None
    assert els[2].inline_digest == inline_digest("inline();")
    # img is not a reported tag
    assert all(e.tag != "img" for e in els)


def test_extract_excludes_tripwire_element():
    html = (
        '<head><script src="http://collector.gauntlet.invalid/tripwire.js" '
        'data-gauntlet-tripwire="1"></script>'
        '<script src="/app.js"></script></head>'
    )
    els = extract_elements(PAGE, html)
    assert len(els) == 1 and els[0].url == "https://honeypage.test/app.js"
    both = extract_elements(PAGE, html, exclude_tripwire=False)
    assert len(both) == 2


def test_link_without_href_skipped():
    assert extract_elements(PAGE, "<link rel=preconnect>") == ()


def test_identity_uses_url_or_inline_digest():
    e1 = ReportedElement(tag="script", url="https://a.test/x.js", attrs_digest="0" * 64)
    e2 = ReportedElement(tag="script", inline_digest="f" * 64, attrs_digest="0" * 64)
    assert e1.identity == ("script", "https://a.test/x.js", "0" * 64)
    assert e2.identity == ("script", "f" * 64, "0" * 64)


def test_diff_missing_and_added():
    served = extract_elements(PAGE, '<script src="/a.js"></script><script src="/b.js"></script>')
    reported = (
        served[0],
        ReportedElement(tag="script", url="https://evil.example/inject.js", attrs_digest="0" * 64),
    )
    d = diff(served, reported)
    assert [e.url for e in d.missing] == ["https://honeypage.test/b.js"]
    assert [e.url for e in d.added] == ["https://evil.example/inject.js"]
    assert not d.empty
    assert diff(served, served) == DomDiff((), ())


def test_validate_report_round_trip():
    obj = {
        "page_url": PAGE,
        "elements": [
            {"tag": "script", "url": "https://a.test/x.js", "attrs_digest": "a" * 64},
            {"tag": "script", "attrs_digest": "b" * 64, "inline_digest": "c" * 64},
            {"tag": "link", "url": "https://a.test/x.css", "attrs_digest": "d" * 64},
        ],
        "ts": 1700000000000,
    }
    report = validate_report(obj)
    assert report.page_url == PAGE
    assert len(report.elements) == 3
    assert report.to_json() == obj


@pytest.mark.parametrize("mutate", [
    lambda o: o.pop("page_url"),
    lambda o: o.__setitem__("page_url", ""),
    lambda o: o.__setitem__("ts", "not-int"),
    lambda o: o.__setitem__("ts", True),
    lambda o: o.__setitem__("elements", "nope"),
    lambda o: o["elements"].append({"tag": "img", "url": "x", "attrs_digest": "a" * 64}),
    lambda o: o["elements"].append({"tag": "script", "attrs_digest": "short"}),
    lambda o: o["elements"].append({"tag": "script", "attrs_digest": "a" * 64}),
    lambda o: o["elements"].append({"tag": "script", "url": "x", "attrs_digest": "Z" * 64}),
])
def test_validate_report_rejects_malformed(mutate):
    obj = {
        "page_url": PAGE,
        "elements": [{"tag": "script", "url": "https://a.test/x.js", "attrs_digest": "a" * 64}],
        "ts": 1,
    }
    mutate(obj)
    with pytest.raises(ValueError):
        validate_report(obj)


# -- classification and injection detection ----------------------------------

from gauntlet.dom import (
    AD,
    ANALYTICS,
    OTHER,
    TRACKER_LISTED,
    WIDGET,
    classify_diff,
    classify_element,
    detect_injection,
)
from gauntlet.filters import load_bundled


@pytest.fixture(scope="module")
def filters():
    return load_bundled()


def _script(url=None, inline=None):
    return ReportedElement(tag="script", url=url, inline_digest=inline, attrs_digest="0" * 64)


def test_classify_filter_listed_carries_rule(filters):
    cl = classify_element(_script("https://ads.adfixture.example/banner.js"), filters, PAGE)
    assert cl.classification == TRACKER_LISTED
    assert cl.rule == "||adfixture.example^"


def test_classify_listed_stylesheet(filters):
    el = ReportedElement(tag="link", url="https://themes.adfixture.example/sponsor.css",
                         attrs_digest="0" * 64)
    cl = classify_element(el, filters, PAGE)
    assert cl.classification == TRACKER_LISTED


@pytest.mark.parametrize("url,label", [
    ("https://telemetry.site.example/app.js", ANALYTICS),
    ("https://site.example/metrics/app.js", ANALYTICS),
    ("https://promo.example/banner/unit.js", AD),
    ("https://platform.twitter.com/widgets.js", WIDGET),
    ("https://cdn.site.example/embed/player.js", WIDGET),
    ("https://cdn.site.example/vendor/runtime.js", OTHER),
])
def test_classify_heuristics(filters, url, label):
    assert classify_element(_script(url), filters, PAGE).classification == label


def test_classify_inline_defaults_to_other(filters):
    cl = classify_element(_script(inline="f" * 64), filters, PAGE)
    assert cl.classification == OTHER and cl.rule is None


def test_classify_inline_widget_digest(filters):
    digests = frozenset({"f" * 64})
    cl = classify_element(_script(inline="f" * 64), filters, PAGE, widget_digests=digests)
    assert cl.classification == WIDGET


def test_classify_diff_labels_both_sides(filters):
    d = DomDiff(
        missing=(_script("https://ads.adfixture.example/banner.js"),),
        added=(_script("https://cdn.site.example/vendor/runtime.js"),),
    )
    missing, added = classify_diff(d, filters, PAGE)
    assert [c.classification for c in missing] == [TRACKER_LISTED]
    assert [c.classification for c in added] == [OTHER]
    assert missing[0].to_json()["rule"] == "||adfixture.example^"


def test_diff_allowlist_drops_both_sides():
    served = extract_elements(PAGE, '<script src="/rotating.js"></script><script src="/a.js"></script>')
    reported = (ReportedElement(tag="script", url="https://honeypage.test/rotating-2.js",
                                attrs_digest="0" * 64),)
    d = diff(served, reported, allowlist=("https://honeypage.test/rotating*",))
    assert [e.url for e in d.missing] == ["https://honeypage.test/a.js"]
    assert d.added == ()


BASELINE_HOSTS = frozenset({"honeypage.test", "cdn.honeypage.test"})


def test_injection_recurring_across_pages():
    el = _script("https://cdn.honeypage.test/extra.js")
    diffs = [
        ("https://honeypage.test/", DomDiff((), (el,))),
        ("https://secure.test/", DomDiff((), (el,))),
    ]
    findings = detect_injection(diffs, BASELINE_HOSTS)
    assert len(findings) == 1
    f = findings[0]
    assert f.recurring and not f.foreign_host
    assert f.pages == ("https://honeypage.test/", "https://secure.test/")
    assert f.source_host == "cdn.honeypage.test"


def test_injection_foreign_host_single_page():
    el = _script("https://implant.example/x.js")
    findings = detect_injection([("https://honeypage.test/", DomDiff((), (el,)))], BASELINE_HOSTS)
    assert len(findings) == 1
    assert findings[0].foreign_host and not findings[0].recurring


def test_injection_single_page_known_host_unflagged():
    # One-page additions from hosts the reference client contacted are
    # indistinguishable from page dynamics.
    el = _script("https://cdn.honeypage.test/extra.js")
    assert detect_injection([("https://honeypage.test/", DomDiff((), (el,)))], BASELINE_HOSTS) == ()


def test_injection_allowlist_suppresses():
    el = _script("https://implant.example/x.js")
    diffs = [("https://honeypage.test/", DomDiff((), (el,)))]
    assert detect_injection(diffs, BASELINE_HOSTS, allowlist=("https://implant.example/*",)) == ()


def test_injection_inline_recurring_keys_by_digest():
    el = _script(inline="e" * 64)
    diffs = [
        ("https://honeypage.test/", DomDiff((), (el,))),
        ("https://secure.test/", DomDiff((), (el,))),
    ]
    findings = detect_injection(diffs, BASELINE_HOSTS)
    assert len(findings) == 1
    assert findings[0].key == "e" * 64
    assert findings[0].source_host is None
    assert findings[0].recurring


def test_injection_groups_by_identity_not_page():
    # Same URL on five pages is one finding listing five pages.
    el = _script("https://implant.example/x.js")
    pages = [f"https://p{i}.test/" for i in range(5)]
    diffs = [(p, DomDiff((), (el,))) for p in pages]
    findings = detect_injection(diffs, BASELINE_HOSTS)
    assert len(findings) == 1
    assert findings[0].pages == tuple(sorted(pages))
