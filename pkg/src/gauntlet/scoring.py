"""Subject scoring: protective and harmful components, ranking, bridging.

Components are kept separate rather than collapsed early, so reports can
show what a subject did right alongside what it did wrong. The single
rank number is net harm; identifier weights enter only through the
exposure component, normalized by the weight budget so rescaling every
weight together changes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

from .history import HistoryFinding
from .leaks import PiiFinding

PROTECTIVE_COMPONENTS = (
    "blocks_tracking_content",
    "https_default",
    "webapi_blocking",
)
HARMFUL_COMPONENTS = (
    "allows_tracking_requests",
    "cert_validation_fail",
    "pii_exposure",
    "history_sharing",
)

# Identifier damage weights: permanent hardware identifiers cost full
# weight, the user-resettable advertising id half, coarse/collective
# signals a quarter.
PII_WEIGHTS = {
    "android_id": 1.0,
    "imei": 1.0,
    "mac": 1.0,
    "adid": 0.5,
    "geolocation": 0.25,
    "app_list": 0.25,
}
WEIGHT_BUDGET = 4.0


def pii_exposure_score(
    exposed_types: frozenset[str] | set[str],
    weights: dict[str, float] | None = None,
    budget: float | None = None,
) -> float:
    """Distinct exposed types, weight-summed and capped at the budget."""
    if weights is None:
        weights = PII_WEIGHTS
    if budget is None:
        budget = sum(weights.values())
    if budget <= 0:
        return 0.0
    total = sum(weights.get(t, 0.0) for t in set(exposed_types))
    return min(1.0, total / budget)


def id_bridging_hosts(findings: list[PiiFinding]) -> tuple[str, ...]:
    """Hosts that received both a resettable and a permanent identifier.

    Joining the two lets the recipient survive an id reset, which defeats
    the point of resettability; it is reported per destination.
    """
    by_host: dict[str, set[bool]] = {}
    for f in findings:
        by_host.setdefault(f.destination_host, set()).add(f.resettable)
    return tuple(sorted(h for h, kinds in by_host.items() if kinds == {True, False}))


@dataclass(frozen=True)
class ScoreCard:
    subject_id: str
    protective: dict[str, float]
    harmful: dict[str, float]
    id_bridging: tuple[str, ...] = ()

    @property
    def protective_total(self) -> float:
        return sum(self.protective.values())

    @property
    def harmful_total(self) -> float:
        return sum(self.harmful.values())

    @property
    def net_harm(self) -> float:
        return self.harmful_total - self.protective_total

    def to_json(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "protective": dict(self.protective),
            "harmful": dict(self.harmful),
            "protective_total": self.protective_total,
            "harmful_total": self.harmful_total,
            "net_harm": self.net_harm,
            "id_bridging": list(self.id_bridging),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScoreCard":
        # Totals are derived properties; only the components round-trip.
        return cls(
            subject_id=obj["subject_id"],
            protective=dict(obj["protective"]),
            harmful=dict(obj["harmful"]),
            id_bridging=tuple(obj.get("id_bridging", ())),
        )


def build_scorecard(
    subject_id: str,
    *,
    blocks_tracking_content: bool,
    https_default: bool,
    webapi_blocking: bool,
    allows_tracking_requests: bool,
    cert_validation_fail: bool,
    pii_findings: list[PiiFinding],
    history_findings: list[HistoryFinding],
    weights: dict[str, float] | None = None,
    budget: float | None = None,
) -> ScoreCard:
    exposed = frozenset(f.pii_type for f in pii_findings)
    protective = {
        "blocks_tracking_content": 1.0 if blocks_tracking_content else 0.0,
        "https_default": 1.0 if https_default else 0.0,
        "webapi_blocking": 1.0 if webapi_blocking else 0.0,
    }
    harmful = {
        "allows_tracking_requests": 1.0 if allows_tracking_requests else 0.0,
        "cert_validation_fail": 1.0 if cert_validation_fail else 0.0,
        "pii_exposure": pii_exposure_score(exposed, weights, budget),
        "history_sharing": 1.0 if any(f.covert for f in history_findings) else 0.0,
    }
    return ScoreCard(
        subject_id=subject_id,
        protective=protective,
        harmful=harmful,
        id_bridging=id_bridging_hosts(pii_findings),
    )


def rank(cards: list[ScoreCard]) -> list[ScoreCard]:
    """Safest first: ascending net harm, ties broken by subject id."""
    return sorted(cards, key=lambda c: (c.net_harm, c.subject_id))
