"""Battery orchestration: run subjects, persist evidence, build reports.

A battery is one subject's full treatment: fresh device profile, a
scripted walk through every fixture page behind the recording gateway,
then a second short pass behind the untrusted authority. Everything
observable lands in the subject's directory as JSON; analysis is a pure
function of those files, so it can be re-run offline and must produce
identical bytes. Wall-clock timestamps live only in the campaign
manifest.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import urlsplit

from . import attribution, connsec, dom, history, leaks, scoring, sites, webapi
from .certs import CertAuthority
from .config import Config
from .filters import load_bundled
from .flows import FlowWriter, ResponseCache, load_flows
from .gateway import Collector, Gateway
from .inject import COLLECTOR_HOST
from .profiles import DeviceProfile
from .subjects import BASELINE_SPEC, SimulatedSubject, SubjectBehaviorSpec, canned_subjects


def _stable_seed(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", "utf-8")


def build_gateway(workdir: Path, probe_script: bytes | None = None,
                  tripwire_asset: bytes | None = None,
                  host: str = "127.0.0.1", port: int = 0) -> Gateway:
    workdir = Path(workdir)
    gateway = Gateway(
        farm=sites.SiteFarm(probe_script=probe_script),
        cache=ResponseCache.open(workdir / "cache"),
        trusted_ca=CertAuthority("gauntlet-trusted", workdir / "ca" / "trusted"),
        untrusted_ca=CertAuthority("gauntlet-untrusted", workdir / "ca" / "untrusted"),
        collector=Collector(archive_dir=workdir / "collector",
                            tripwire_asset=tripwire_asset),
        host=host,
        port=port,
    )
    return gateway


def run_battery(
    gateway: Gateway,
    spec: SubjectBehaviorSpec,
    workdir: Path,
    profile: DeviceProfile | None = None,
    mode: str = "record",
    timeout: float = 10.0,
) -> Path:
    """Drive one subject through the full battery; returns its evidence dir."""
    workdir = Path(workdir)
    subject_dir = workdir / "subjects" / spec.name
    subject_dir.mkdir(parents=True, exist_ok=True)
    if profile is None:
        profile = DeviceProfile.generate(seed=_stable_seed(spec.subject_id))
    profile.save(subject_dir / "profile.json")
    _write_json(subject_dir / "spec.json", json.loads(spec.canonical_json()))

    trusted_ca_paths = [gateway.trusted_ca.ca_cert_path]
    gateway.collector.reset()

    with FlowWriter(subject_dir / "flows.jsonl", session_id=f"{spec.name}-t") as writer:
        session = gateway.begin_session(writer, mode=mode, cert_mode="trusted", inject=True)
        subject = SimulatedSubject(spec, gateway.address, trusted_ca_paths, profile,
                                   timeout=timeout)
        _probe_compatibility(subject)
        for url in sites.visit_urls(spec.default_scheme):
            subject.visit(url)
        subject.emit_leaks()
        subject.emit_history(list(sites.POPULAR_HOSTS))
        gateway.quiesce()
        trusted_meta = {
            "session_id": f"{spec.name}-t",
            "injection_counts": dict(session.injection_counts),
            "replay_misses": list(session.replay_misses),
        }

    with FlowWriter(subject_dir / "untrusted.jsonl", session_id=f"{spec.name}-u") as writer:
        session = gateway.begin_session(writer, mode=mode, cert_mode="untrusted", inject=True)
        retry = SimulatedSubject(spec, gateway.address, trusted_ca_paths, profile,
                                 timeout=timeout)
        retry.visit(f"https://{sites.SECURE_HOST}/")
        gateway.quiesce()
        untrusted_meta = {
            "session_id": f"{spec.name}-u",
            "injection_counts": dict(session.injection_counts),
            "replay_misses": list(session.replay_misses),
        }

    _write_json(subject_dir / "visited.json", subject.visited)
    _write_json(subject_dir / "dom_reports.json",
                [r.to_json() for r in gateway.collector.dom_reports])
    _write_json(subject_dir / "probe_reports.json",
                [r.to_json() for r in gateway.collector.probe_reports])
    _write_json(subject_dir / "session_meta.json",
                {"trusted": trusted_meta, "untrusted": untrusted_meta})
    return subject_dir


def _probe_compatibility(subject: SimulatedSubject) -> None:
    status, _, body = subject.client.fetch(f"http://{COLLECTOR_HOST}/health")
    if status != 200 or body.strip() != b"ok":
        raise RuntimeError("collector health check failed; gateway not ready")


@dataclass(frozen=True)
class SubjectReport:
    subject_id: str
    name: str
    package_name: str
    scorecard: scoring.ScoreCard
    connsec: connsec.ConnSecReport
    webapi: webapi.WebApiAssessment
    pii_findings: tuple[leaks.PiiFinding, ...]
    history_findings: tuple[history.HistoryFinding, ...]
    allowed_tracking: tuple[attribution.TrackingUse, ...]
    dom: DomVerdict
    engine: str
    unattributed_count: int
    degraded_scans: int

    def to_json(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "name": self.name,
            "package_name": self.package_name,
            "scorecard": self.scorecard.to_json(),
            "connsec": self.connsec.to_json(),
            "webapi": self.webapi.to_json(),
            "pii_findings": [f.to_json() for f in self.pii_findings],
            "history_findings": [f.to_json() for f in self.history_findings],
            "allowed_tracking": [
                {"flow_id": u.flow_id, "url": u.url, "page_url": u.page_url, "rule": u.rule}
                for u in self.allowed_tracking
            ],
            "dom": {
                "pages": self.dom.pages,
                "clean": self.dom.clean,
                "tracker_missing": list(self.dom.tracker_missing),
                "hidden_but_fetched": list(self.dom.hidden_but_fetched),
                "added_elements": list(self.dom.added_elements),
                "injections": [f.to_json() for f in self.dom.injections],
            },
            "engine": self.engine,
            "unattributed_count": self.unattributed_count,
            "degraded_scans": self.degraded_scans,
        }


def _page_body_text(flows, page_url: str) -> str | None:
    for flow in flows:
        if flow.url == page_url and flow.method == "GET" and flow.status == 200:
            ctype = (flow.header("content-type", which="response") or "").lower()
            if ctype.startswith("text/html"):
                return flow.response_body.decode("utf-8", "replace")
    return None


@dataclass(frozen=True)
class DomVerdict:
    pages: int
    clean: bool
    tracker_missing: tuple[str, ...]      # filter-listed elements absent from reports
    hidden_but_fetched: tuple[str, ...]   # absent from reports yet present in flows
    added_elements: tuple[str, ...]
    injections: tuple[dom.InjectionFinding, ...]


def _dom_verdict(flows, dom_reports, filters, baseline_hosts) -> DomVerdict:
    """Compare each reported page against the elements actually served."""
    pages = 0
    clean = True
    tracker_missing: set[str] = set()
    hidden: set[str] = set()
    added: set[str] = set()
    page_diffs: list[tuple[str, dom.DomDiff]] = []
    fetched_urls = {f.url for f in flows if f.method}
    for report in dom_reports:
        served = _page_body_text(flows, report.page_url)
        if served is None:
            continue
        pages += 1
        expected = dom.extract_elements(report.page_url, served)
        delta = dom.diff(expected, report.elements)
        page_diffs.append((report.page_url, delta))
        if not delta.empty:
            clean = False
        missing_cls, added_cls = dom.classify_diff(delta, filters, report.page_url)
        for cl in missing_cls:
            if cl.classification == dom.TRACKER_LISTED:
                tracker_missing.add(cl.element.url or cl.element.inline_digest or "")
            if cl.element.url and cl.element.url in fetched_urls:
                hidden.add(cl.element.url)
        for cl in added_cls:
            if cl.element.url:
                added.add(cl.element.url)
    return DomVerdict(
        pages=pages,
        clean=clean,
        tracker_missing=tuple(sorted(tracker_missing)),
        hidden_but_fetched=tuple(sorted(hidden)),
        added_elements=tuple(sorted(added)),
        injections=dom.detect_injection(page_diffs, baseline_hosts),
    )


def analyze_subject(
    subject_dir: Path,
    baseline_hosts: set[str],
    config: Config | None = None,
) -> SubjectReport:
    """Pure analysis over a battery's persisted evidence."""
    subject_dir = Path(subject_dir)
    config = config or Config()
    spec_obj = json.loads((subject_dir / "spec.json").read_text("utf-8"))
    spec = SubjectBehaviorSpec.from_json(spec_obj)
    profile = DeviceProfile.load(subject_dir / "profile.json")
    flows = load_flows(subject_dir / "flows.jsonl")
    untrusted = load_flows(subject_dir / "untrusted.jsonl")
    visited = json.loads((subject_dir / "visited.json").read_text("utf-8"))
    dom_reports = [
        dom.validate_report(obj)
        for obj in json.loads((subject_dir / "dom_reports.json").read_text("utf-8"))
    ]
    probe_objs = json.loads((subject_dir / "probe_reports.json").read_text("utf-8"))
    probe = webapi.validate_probe_report(probe_objs[-1]) if probe_objs else None

    filters = load_bundled()
    attrib = attribution.attribute_flows(flows, visited)
    allowed = attribution.detect_allowed_tracking(flows, attrib, filters)

    scan_targets = [f for f in flows if f.host != COLLECTOR_HOST and f.method]
    pii_findings = leaks.scan_flows(
        scan_targets, profile,
        declared_developer_domain=spec.declared_developer_domain,
    )
    pii_findings.sort(key=lambda f: (f.flow_id, f.pii_type, f.encoding))

    conn = connsec.analyze(flows, untrusted)
    page_hosts = sorted({(urlsplit(u).hostname or "").lower() for u in visited})
    hist = history.analyze(
        flows,
        visited_hosts=page_hosts,
        popular_hosts=list(sites.POPULAR_HOSTS),
        baseline_hosts=baseline_hosts,
        threshold=config.history_threshold,
        pii_findings=pii_findings,
        org_map=leaks.load_org_map(),
    )
    assessment = webapi.assess(probe, credit_enabled=config.webapi_blocking_credit)

    verdict = _dom_verdict(flows, dom_reports, filters, baseline_hosts)
    card = scoring.build_scorecard(
        spec.subject_id,
        blocks_tracking_content=bool(verdict.tracker_missing),
        https_default=conn.default_protocol == "https",
        webapi_blocking=assessment.blocking_credit,
        allows_tracking_requests=bool(allowed),
        cert_validation_fail=conn.accepts_untrusted_cert is True,
        pii_findings=pii_findings,
        history_findings=hist,
    )
    engine = attribution.attribute_engine(flows, visited, spec.package_name)
    report = SubjectReport(
        subject_id=spec.subject_id,
        name=spec.name,
        package_name=spec.package_name,
        scorecard=card,
        connsec=conn,
        webapi=assessment,
        pii_findings=tuple(pii_findings),
        history_findings=tuple(hist),
        allowed_tracking=tuple(allowed),
        dom=verdict,
        engine=engine,
        unattributed_count=len(attribution.subject_initiated(flows, visited)),
        degraded_scans=sum(1 for f in pii_findings if f.degraded_scan),
    )
    _write_json(subject_dir / "report.json", report.to_json())
    return report


@dataclass
class CampaignResult:
    workdir: Path
    reports: list[SubjectReport]
    ranking_path: Path
    manifest_path: Path


def _visited_hosts_of(flows) -> set[str]:
    return {f.host for f in flows if f.method and f.host}


def run_campaign(
    workdir: Path,
    config: Config | None = None,
    specs: list[SubjectBehaviorSpec] | None = None,
    probe_script: bytes | None = None,
    tripwire_asset: bytes | None = None,
) -> CampaignResult:
    """Baseline first, then every subject; ends with ranking and manifest."""
    workdir = Path(workdir)
    config = config or Config(workdir=str(workdir))
    if specs is None:
        specs = list(canned_subjects().values())
    started = time.time()
    gateway = build_gateway(workdir, probe_script=probe_script,
                            tripwire_asset=tripwire_asset,
                            host=config.gateway_host, port=config.gateway_port)
    gateway.start()
    rebuilds = 0
    try:
        baseline_dir = run_battery(gateway, BASELINE_SPEC, workdir,
                                   timeout=config.visit_timeout)
        baseline_hosts = _visited_hosts_of(load_flows(baseline_dir / "flows.jsonl"))
        _write_json(workdir / "baseline_hosts.json", sorted(baseline_hosts))
        analyze_subject(baseline_dir, baseline_hosts, config)

        reports = []
        for i, spec in enumerate(specs):
            if i and i % config.cache_rebuild_every == 0:
                gateway.cache.rebuild()
                rebuilds += 1
            subject_dir = run_battery(gateway, spec, workdir,
                                      timeout=config.visit_timeout)
            reports.append(analyze_subject(subject_dir, baseline_hosts, config))
    finally:
        gateway.stop()
        gateway.cache.flush()

    ranking_path = write_ranking(workdir, [(r.name, r.scorecard) for r in reports])
    manifest = {
        "config": config.to_json(),
        "subjects": [r.name for r in reports],
        "cache_epoch": gateway.cache.epoch,
        "cache_rebuilds": rebuilds,
        "cache_entries": len(gateway.cache),
        "started_at": int(started),
        "finished_at": int(time.time()),
    }
    manifest_path = workdir / "campaign_manifest.json"
    _write_json(manifest_path, manifest)
    return CampaignResult(workdir=workdir, reports=reports,
                          ranking_path=ranking_path, manifest_path=manifest_path)


def write_ranking(workdir: Path, entries: list[tuple[str, scoring.ScoreCard]]) -> Path:
    """Write ranking.csv, safest subject first. Entries are (name, scorecard)."""
    names = {card.subject_id: name for name, card in entries}
    ranked = scoring.rank([card for _, card in entries])
    path = Path(workdir) / "ranking.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "rank", "name", "subject_id", "net_harm",
            "protective_total", "harmful_total",
            "blocks_tracking_content", "https_default", "webapi_blocking",
            "allows_tracking_requests", "cert_validation_fail",
            "pii_exposure", "history_sharing",
        ])
        for pos, card in enumerate(ranked, start=1):
            writer.writerow([
                pos, names[card.subject_id], card.subject_id,
                f"{card.net_harm:.6g}",
                f"{card.protective_total:.6g}", f"{card.harmful_total:.6g}",
                *(f"{card.protective[c]:.6g}" for c in scoring.PROTECTIVE_COMPONENTS),
                *(f"{card.harmful[c]:.6g}" for c in scoring.HARMFUL_COMPONENTS),
            ])
    return path
