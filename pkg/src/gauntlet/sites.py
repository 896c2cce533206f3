"""Deterministic fixture sites served to subjects through the gateway.

Every page is built from constants so recorded caches and replays stay
byte-stable. Unknown hosts fall through to a fixed sink response that
never reflects anything from the request, keeping synthetic leak traffic
one-directional.
"""

from __future__ import annotations

from .flows import Headers

HONEYPAGE_HOST = "honeypage.test"
PERMISSIONS_HOST = "permissions.test"
BARE_HOST = "bare.test"
SECURE_HOST = "secure.test"
MIXED_HOST = "mixed.test"
INSECURE_HOST = "insecure.test"

# Subresources of the honeypage that bundled filter lists do not touch.
HONEYPAGE_LEGIT = (
    ("script", "https://honeypage.test/static/app.js"),
    ("script", "https://cdn.honeypage.test/lib/ui.js"),
    ("script", "https://static.goodcdn.example/framework.js"),
    ("link", "https://honeypage.test/static/style.css"),
)
# Subresources the bundled lists block; the testbed fixture list names them.
HONEYPAGE_FILTERLISTED = (
    ("script", "https://ads.adfixture.example/banner.js"),
    ("script", "https://static.trackpixel.example/pixel.js"),
    ("script", "https://cdn.bannerfarm.example/unit/728x90.js"),
    ("script", "https://analytics-sink.example/insight.js"),
    ("link", "https://themes.adfixture.example/sponsor.css"),
)
# Fetched but invisible to DOM reports (only script/link are reported).
HONEYPAGE_IMAGES = (
    "https://honeypage.test/img/logo.png",
    "https://img.clickfunnel.example/fixture-pixel.gif?id=unit9",
)

# Plain-http subresources of the mixed-content page.
MIXED_SUBRESOURCES = (
    "http://assets.mixed.test/style.css",
    "http://assets.mixed.test/banner.png",
)

# One representative per popularity category.
POPULAR_HOSTS = (
    "newsgrid.example",
    "videotube.example",
    "shopnest.example",
    "socialring.example",
    "searchhub.example",
    "docs.refwiki.example",
    "metricsblog.example",
    "portalone.example",
    "radioloop.example",
    "chatterbox.example",
    "travelgate.example",
    "bankrail.example",
    "eduplex.example",
    "gamespark.example",
    "weathernow.example",
    "foodbasket.example",
)

# Third-party references embedded in popular fixture pages, so stock
# clients generate blockable traffic there like they would in the wild.
_POPULAR_THIRD_PARTY = {
    "newsgrid.example": (
        ("script", "https://securepubads.doubleclick.net/tag/js/gpt.js"),
        ("script", "https://www.google-analytics.com/analytics.js"),
    ),
    "videotube.example": (
        ("script", "https://imasdk.googleapis.com/js/sdkloader/ima3.js"),
        ("script", "https://cdn.taboola.com/libtrc/loader.js"),
    ),
    "shopnest.example": (
        ("script", "https://connect.facebook.net/en_US/fbevents.js"),
        ("script", "https://static.criteo.net/js/ld/ld.js"),
    ),
    "socialring.example": (
        ("script", "https://static.hotjar.com/c/hotjar.js"),
    ),
    "metricsblog.example": (
        ("script", "https://cdn.mxpnl.com/libs/mixpanel.js"),
        ("script", "https://script.crazyegg.com/pages/scripts/0001.js"),
    ),
    "portalone.example": (
        ("script", "https://cdn.portalone.example/zonebuilder.js"),
        ("script", "https://z.moatads.com/pagemeasure/moatad.js"),
    ),
    "gamespark.example": (
        ("script", "https://sdk.vungle.com/prebid.js"),
    ),
    "weathernow.example": (
        ("script", "https://tags.crwdcntrl.net/lt/c/weather.js"),
    ),
}

SINK_BODY = b"sink\n"


def _html(title: str, head_extra: str, body_extra: str) -> bytes:
    # assembled line by line: dedent would misfire on interpolated content
    lines = [
        "<!DOCTYPE html>",
        "<html>",
        "<head>",
        f"<title>{title}</title>",
        head_extra,
        "</head>",
        "<body>",
        f"<h1>{title}</h1>",
        body_extra,
        "</body>",
        "</html>",
    ]
    return ("\n".join(line for line in lines if line) + "\n").encode("utf-8")


def _element(tag: str, url: str) -> str:
    if tag == "script":
        return f'<script src="{url}"></script>'
    return f'<link rel="stylesheet" href="{url}">'


def _honeypage() -> bytes:
    head = "\n".join(
        [_element(t, u) for t, u in HONEYPAGE_LEGIT]
        + [_element(t, u) for t, u in HONEYPAGE_FILTERLISTED]
    )
    body = "\n".join(f'<img src="{u}">' for u in HONEYPAGE_IMAGES)
    return _html("Honeypage", head, body + "\n<p>fixture content</p>")


def _permissions_page() -> bytes:
    return _html(
        "Permissions probe",
        '<script src="/probe.js"></script>',
        "<p>probe host page</p>",
    )


def _mixed_page() -> bytes:
    refs = "\n".join(
        [f'<link rel="stylesheet" href="{MIXED_SUBRESOURCES[0]}">',
         f'<img src="{MIXED_SUBRESOURCES[1]}">']
    )
    return _html("Mixed content", refs, "<p>page served over https with http subresources</p>")


def _popular_page(host: str) -> bytes:
    own = [
        ("script", f"https://{host}/static/site.js"),
        ("link", f"https://{host}/static/site.css"),
    ]
    third = _POPULAR_THIRD_PARTY.get(host, ())
    head = "\n".join(_element(t, u) for t, u in list(own) + list(third))
    return _html(host, head, f"<p>{host} front page</p>")


_CSS = b"body { margin: 0; font-family: sans-serif; }\n"
_JS = b"(function(){var fixture=true;})();\n"
_GIF = (  # 1x1 transparent GIF
    b"GIF89a\x01\x00\x01\x00\x80\x00\x00\x00\x00\x00\xff\xff\xff!\xf9\x04"
    b"\x01\x00\x00\x00\x00,\x00\x00\x00\x00\x01\x00\x01\x00\x00\x02\x02D"
    b"\x01\x00;"
)
_PNG = (  # 1x1 PNG
    b"\x89PNG\r\n\x1a\n\x00\x00\x00\rIHDR\x00\x00\x00\x01\x00\x00\x00\x01"
    b"\x08\x06\x00\x00\x00\x1f\x15\xc4\x89\x00\x00\x00\nIDATx\x9cc\x00\x01"
    b"\x00\x00\x05\x00\x01\r\n-\xb4\x00\x00\x00\x00IEND\xaeB`\x82"
)

PROBE_PLACEHOLDER = (
    b"// permissions probe placeholder: replaced by the built frontend asset\n"
)


def _asset_for_path(path: str) -> tuple[str, bytes] | None:
    if path.endswith(".js"):
        return "application/javascript", _JS
    if path.endswith(".css"):
        return "text/css", _CSS
    if path.endswith(".gif"):
        return "image/gif", _GIF
    if path.endswith((".png", ".jpg", ".ico", ".webp")):
        return "image/png", _PNG
    return None


class SiteFarm:
    """Virtual-host dispatcher for every fixture origin.

    ``probe_script`` can be swapped for the built frontend asset; the
    placeholder keeps the battery runnable without it.
    """

    def __init__(self, probe_script: bytes | None = None) -> None:
        self.probe_script = probe_script or PROBE_PLACEHOLDER
        self._pages: dict[tuple[str, str], tuple[str, bytes]] = {}
        self._build()

    def _build(self) -> None:
        p = self._pages
        p[(HONEYPAGE_HOST, "/")] = ("text/html; charset=utf-8", _honeypage())
        p[(PERMISSIONS_HOST, "/")] = ("text/html; charset=utf-8", _permissions_page())
        p[(BARE_HOST, "/")] = (
            "text/html; charset=utf-8",
            _html("Bare domain", "", "<p>served identically on both schemes</p>"),
        )
        p[(SECURE_HOST, "/")] = (
            "text/html; charset=utf-8",
            _html("Secure page", _element("script", f"https://{SECURE_HOST}/static/site.js"), ""),
        )
        p[(MIXED_HOST, "/")] = ("text/html; charset=utf-8", _mixed_page())
        p[(INSECURE_HOST, "/")] = (
            "text/html; charset=utf-8",
            _html("Insecure page", "", "<p>plain http only</p>"),
        )
        for host in POPULAR_HOSTS:
            p[(host, "/")] = ("text/html; charset=utf-8", _popular_page(host))

    def respond(self, method: str, host: str, path: str, scheme: str = "https") -> tuple[int, Headers, bytes]:
        host = host.lower()
        bare_path = path.split("?", 1)[0]
        if host == PERMISSIONS_HOST and bare_path == "/probe.js":
            body = self.probe_script
            ctype = "application/javascript"
        else:
            page = self._pages.get((host, bare_path))
            if page is not None:
                ctype, body = page
            else:
                asset = _asset_for_path(bare_path)
                if asset is not None:
                    ctype, body = asset
                else:
                    ctype, body = "text/plain; charset=utf-8", SINK_BODY
        if method.upper() == "POST":
            # Sinks acknowledge uploads without reflecting them.
            ctype, body = "text/plain; charset=utf-8", SINK_BODY
        headers: Headers = (
            ("Content-Type", ctype),
            ("Content-Length", str(len(body))),
            ("Cache-Control", "no-store"),
        )
        if method.upper() == "HEAD":
            body = b""
        return 200, headers, body


def visit_urls(default_scheme: str = "https") -> list[str]:
    """The battery's page list, in visit order."""
    urls = [
        f"https://{HONEYPAGE_HOST}/",
        f"https://{PERMISSIONS_HOST}/",
        f"{default_scheme}://{BARE_HOST}/",
        f"https://{SECURE_HOST}/",
        f"https://{MIXED_HOST}/",
        f"http://{INSECURE_HOST}/",
    ]
    urls.extend(f"https://{host}/" for host in POPULAR_HOSTS)
    return urls
