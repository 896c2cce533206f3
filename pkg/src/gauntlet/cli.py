"""Command line front end.

Thin verbs over the orchestrator: everything a command produces lands in
the work directory as files; stdout carries a short human summary only.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import orchestrator, scoring
from .config import Config
from .flows import load_flows
from .subjects import BASELINE_SPEC, SubjectBehaviorSpec, canned_subjects


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gauntlet",
        description="Run scripted web clients through a recording gateway "
                    "and score their privacy behavior.",
    )
    parser.add_argument("--config", metavar="FILE", default=None,
                        help="JSON config file")
    parser.add_argument("--workdir", metavar="DIR", default=None,
                        help="work directory (overrides config)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("subjects", help="list the built-in subject behaviors")

    sub.add_parser("record", help="run the reference client once to "
                                  "populate the response cache")

    run_p = sub.add_parser("run", help="run one subject's battery and analyze it")
    run_p.add_argument("subject", help="built-in subject name, or a behavior "
                                       "spec JSON file")

    camp = sub.add_parser("campaign", help="baseline plus every subject, "
                                           "then the ranking")
    camp.add_argument("--subject", action="append", default=None,
                      metavar="NAME", help="restrict to these subjects "
                                           "(repeatable)")

    an = sub.add_parser("analyze", help="re-run analysis over recorded evidence")
    an.add_argument("subject_dir", type=Path)

    sub.add_parser("score", help="rebuild ranking.csv from existing reports")

    rep = sub.add_parser("report", help="print one subject's report summary")
    rep.add_argument("subject_dir", type=Path)
    return parser


def _config_for(args) -> Config:
    config = Config.load(args.config)
    if args.workdir:
        config.workdir = str(args.workdir)
    return config


def _resolve_spec(token: str) -> SubjectBehaviorSpec:
    subs = canned_subjects()
    if token in subs:
        return subs[token]
    path = Path(token)
    if path.is_file():
        return SubjectBehaviorSpec.from_json(json.loads(path.read_text("utf-8")))
    raise SystemExit(f"unknown subject {token!r}; try one of: "
                     + ", ".join(sorted(subs)))


def _load_baseline_hosts(workdir: Path) -> set[str]:
    path = workdir / "baseline_hosts.json"
    if not path.is_file():
        raise SystemExit("no baseline recorded yet; run 'gauntlet record' first")
    return set(json.loads(path.read_text("utf-8")))


def _cmd_subjects() -> int:
    for name, spec in sorted(canned_subjects().items()):
        print(f"{name}  ({spec.package_name})")
    return 0


def _record_baseline(gateway, config: Config, workdir: Path) -> None:
    baseline_dir = orchestrator.run_battery(gateway, BASELINE_SPEC, workdir,
                                            timeout=config.visit_timeout)
    hosts = {f.host for f in load_flows(baseline_dir / "flows.jsonl")
             if f.method and f.host}
    orchestrator._write_json(workdir / "baseline_hosts.json", sorted(hosts))
    orchestrator.analyze_subject(baseline_dir, hosts, config)


def _cmd_record(config: Config) -> int:
    workdir = config.workdir_path
    gateway = orchestrator.build_gateway(workdir, host=config.gateway_host,
                                         port=config.gateway_port)
    gateway.start()
    try:
        _record_baseline(gateway, config, workdir)
    finally:
        gateway.stop()
        gateway.cache.flush()
    print(f"baseline recorded: {workdir / 'subjects' / BASELINE_SPEC.name}")
    print(f"cache entries: {len(gateway.cache)}")
    return 0


def _cmd_run(config: Config, token: str) -> int:
    spec = _resolve_spec(token)
    workdir = config.workdir_path
    gateway = orchestrator.build_gateway(workdir, host=config.gateway_host,
                                         port=config.gateway_port)
    gateway.start()
    try:
        if not (workdir / "baseline_hosts.json").is_file():
            _record_baseline(gateway, config, workdir)
        subject_dir = orchestrator.run_battery(gateway, spec, workdir,
                                               timeout=config.visit_timeout)
    finally:
        gateway.stop()
        gateway.cache.flush()
    report = orchestrator.analyze_subject(
        subject_dir, _load_baseline_hosts(workdir), config)
    card = report.scorecard
    print(f"{report.name}: net harm {card.net_harm:+.6g} "
          f"(protective {card.protective_total:.6g}, "
          f"harmful {card.harmful_total:.6g})")
    print(f"report: {subject_dir / 'report.json'}")
    return 0


def _cmd_campaign(config: Config, names: list[str] | None) -> int:
    specs = None
    if names:
        specs = [_resolve_spec(n) for n in names]
    result = orchestrator.run_campaign(config.workdir_path, config, specs=specs)
    print(f"ranking: {result.ranking_path}")
    for line in result.ranking_path.read_text("utf-8").strip().splitlines():
        print(line)
    return 0


def _cmd_analyze(config: Config, subject_dir: Path) -> int:
    workdir = config.workdir_path
    if not (subject_dir / "flows.jsonl").is_file():
        raise SystemExit(f"{subject_dir} holds no battery evidence")
    report = orchestrator.analyze_subject(
        subject_dir, _load_baseline_hosts(workdir), config)
    print(f"report: {subject_dir / 'report.json'}")
    print(f"net harm {report.scorecard.net_harm:+.6g}")
    return 0


def _cmd_score(config: Config) -> int:
    workdir = config.workdir_path
    entries = []
    subjects_dir = workdir / "subjects"
    if subjects_dir.is_dir():
        for report_path in sorted(subjects_dir.glob("*/report.json")):
            obj = json.loads(report_path.read_text("utf-8"))
            if obj["name"] == BASELINE_SPEC.name:
                continue
            entries.append((obj["name"], scoring.ScoreCard.from_json(obj["scorecard"])))
    if not entries:
        raise SystemExit("no subject reports found; run a campaign first")
    path = orchestrator.write_ranking(workdir, entries)
    print(f"ranking: {path}")
    return 0


def _cmd_report(subject_dir: Path) -> int:
    path = subject_dir / "report.json"
    if not path.is_file():
        raise SystemExit(f"{path} not found; analyze the subject first")
    obj = json.loads(path.read_text("utf-8"))
    card = obj["scorecard"]
    print(f"subject: {obj['name']} ({obj['package_name']})")
    print(f"net harm: {card['net_harm']:+.6g}")
    for side in ("protective", "harmful"):
        parts = ", ".join(f"{k}={v:.6g}" for k, v in sorted(card[side].items()))
        print(f"  {side}: {parts}")
    print(f"pii findings: {len(obj['pii_findings'])}")
    for f in obj["pii_findings"]:
        print(f"  {f['pii_type']} ({f['encoding']}, {f['location']}) "
              f"-> {f['destination_host']} [{f['party']}-party]")
    print(f"history findings: {len(obj['history_findings'])}")
    for f in obj["history_findings"]:
        label = f["feature"] or "covert"
        print(f"  {f['destination_host']} fraction={f['fraction']:.6g} ({label})")
    print(f"allowed tracking requests: {len(obj['allowed_tracking'])}")
    print(f"dom: pages={obj['dom']['pages']} clean={obj['dom']['clean']} "
          f"injections={len(obj['dom']['injections'])}")
    print(f"connection security: {json.dumps(obj['connsec'], sort_keys=True)}")
    print(f"webapi: posture={obj['webapi']['posture']}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    config = _config_for(args)
    if args.command == "subjects":
        return _cmd_subjects()
    if args.command == "record":
        return _cmd_record(config)
    if args.command == "run":
        return _cmd_run(config, args.subject)
    if args.command == "campaign":
        return _cmd_campaign(config, args.subject)
    if args.command == "analyze":
        return _cmd_analyze(config, args.subject_dir)
    if args.command == "score":
        return _cmd_score(config)
    if args.command == "report":
        return _cmd_report(args.subject_dir)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
