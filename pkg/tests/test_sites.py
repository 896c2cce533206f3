"""Fixture site farm: routing, determinism, sink behavior."""

from urllib.parse import urlsplit

from gauntlet import sites
from gauntlet.sites import SiteFarm


def _body(farm, method, host, path, scheme="https"):
    status, headers, body = farm.respond(method, host, path, scheme)
    assert status == 200
    return dict(headers), body


def test_every_battery_page_serves_html():
    farm = SiteFarm()
    for url in sites.visit_urls():
        parts = urlsplit(url)
        headers, body = _body(farm, "GET", parts.hostname, parts.path or "/", parts.scheme)
        assert headers["Content-Type"].startswith("text/html")
        assert body.startswith(b"<!DOCTYPE html>")


def test_visit_urls_order_and_scheme():
    urls = sites.visit_urls(default_scheme="http")
    assert len(urls) == 6 + len(sites.POPULAR_HOSTS)
    assert urls[0] == "https://honeypage.test/"
    assert urls[2] == "http://bare.test/"
    assert urls[5] == "http://insecure.test/"
    assert sites.visit_urls()[2] == "https://bare.test/"
    # popular sites always ride https
    assert all(u.startswith("https://") for u in urls[6:])


def test_honeypage_contains_all_declared_subresources():
    farm = SiteFarm()
    _, body = _body(farm, "GET", sites.HONEYPAGE_HOST, "/")
    text = body.decode()
    for _, url in sites.HONEYPAGE_LEGIT + sites.HONEYPAGE_FILTERLISTED:
        assert url in text
    for url in sites.HONEYPAGE_IMAGES:
        assert url in text


def test_mixed_page_references_http_subresources():
    farm = SiteFarm()
    _, body = _body(farm, "GET", sites.MIXED_HOST, "/")
    text = body.decode()
    for url in sites.MIXED_SUBRESOURCES:
        assert url in text
        assert url.startswith("http://")


def test_unknown_host_and_path_get_sink():
    farm = SiteFarm()
    headers, body = _body(farm, "GET", "never-declared.example", "/whatever")
    assert body == sites.SINK_BODY
    assert headers["Content-Type"].startswith("text/plain")


def test_post_never_reflects_request_content():
    farm = SiteFarm()
    status, _, body = farm.respond("POST", "datasink.example", "/collect")
    assert status == 200
    assert body == sites.SINK_BODY
    # even on a host that serves html for GET
    _, _, body = farm.respond("POST", sites.HONEYPAGE_HOST, "/")
    assert body == sites.SINK_BODY


def test_head_has_empty_body_but_full_length():
    farm = SiteFarm()
    status, headers, body = farm.respond("HEAD", sites.HONEYPAGE_HOST, "/")
    assert status == 200
    assert body == b""
    _, _, full = farm.respond("GET", sites.HONEYPAGE_HOST, "/")
    assert dict(headers)["Content-Length"] == str(len(full))


def test_asset_types_by_extension():
    farm = SiteFarm()
    cases = {
        "/static/app.js": "application/javascript",
        "/static/style.css": "text/css",
        "/fixture-pixel.gif": "image/gif",
        "/img/logo.png": "image/png",
    }
    for path, ctype in cases.items():
        headers, body = _body(farm, "GET", "cdn.honeypage.test", path)
        assert headers["Content-Type"] == ctype
        assert body


def test_query_string_does_not_change_routing():
    farm = SiteFarm()
    _, plain = _body(farm, "GET", "img.clickfunnel.example", "/fixture-pixel.gif")
    _, with_q = _body(farm, "GET", "img.clickfunnel.example", "/fixture-pixel.gif?id=unit9")
    assert plain == with_q


def test_probe_script_swap():
    default = SiteFarm()
    _, body = _body(default, "GET", sites.PERMISSIONS_HOST, "/probe.js")
    assert body == sites.PROBE_PLACEHOLDER
    custom = SiteFarm(probe_script=b"console.log('built');\n")
    headers, body = _body(custom, "GET", sites.PERMISSIONS_HOST, "/probe.js")
    assert body == b"console.log('built');\n"
    assert headers["Content-Type"] == "application/javascript"


def test_farm_output_is_deterministic_across_instances():
    a, b = SiteFarm(), SiteFarm()
    for url in sites.visit_urls():
        parts = urlsplit(url)
        assert a.respond("GET", parts.hostname, "/", parts.scheme) == \
            b.respond("GET", parts.hostname, "/", parts.scheme)


def test_popular_pages_embed_real_tracker_references():
    farm = SiteFarm()
    _, body = _body(farm, "GET", "newsgrid.example", "/")
    text = body.decode()
    assert "securepubads.doubleclick.net" in text
    assert "www.google-analytics.com" in text
    # every popular page carries its own first-party assets
    for host in sites.POPULAR_HOSTS:
        _, page = _body(farm, "GET", host, "/")
        assert f"https://{host}/static/site.js" in page.decode()


def test_host_lookup_is_case_insensitive():
    farm = SiteFarm()
    _, lower = _body(farm, "GET", sites.HONEYPAGE_HOST, "/")
    _, upper = _body(farm, "GET", sites.HONEYPAGE_HOST.upper(), "/")
    assert lower == upper
