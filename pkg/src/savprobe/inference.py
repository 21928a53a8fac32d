"""Verdict pipeline: observations and scan responses in, SAV verdicts out.

Evidence is tallied per probed resolver after dedup, then aggregated
independently at three granularities: /24 blocks, longest-matching routed
prefixes, and origin ASes. A unit with only spoofed-probe arrivals is
vulnerable to inbound spoofing (S); a unit whose open resolvers never saw a
spoofed probe filters inbound traffic somewhere on the path (NS); a unit
showing both is inconsistent (I). Units without evidence are absent, never
defaulted.

Outbound policy comes from two independent sources: ingested Spoofer-style
test states and misbehaving-forwarder detections, combined vuln-wins (one
leaked packet proves the absence of filtering; a blocked test only vouches
for one path).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

from savprobe.collector import ObservationLog
from savprobe.engine import ScanResponse
from savprobe.netmodel import (
    AsnMap,
    Ip4,
    NetParseError,
    Prefix,
    RoutingTable,
    to_slash24,
)

S = "S"
NS = "NS"
I = "I"

SLASH24 = "slash24"
PREFIX = "prefix"
ASN = "asn"
GRANULARITIES = (SLASH24, PREFIX, ASN)

OUT_VULN = "vuln"
OUT_FILTERED = "filtered"

SPOOFER_STATES = ("blocked", "rewritten", "unknown", "received")


@dataclass
class EvidenceCounts:
    vuln: int = 0
    sav: int = 0


def inbound_evidence(
    spoofed_obs: ObservationLog, open_set: set[Ip4]
) -> dict[Ip4, EvidenceCounts]:
    """Per-resolver evidence from a deduplicated observation log.

    Only spoofed-tagged observations count as vulnerability evidence; an
    open resolver that never shows up as a spoofed-scan target is filtering
    evidence. Forwarded observations credit the encoded target (the probed
    host), which identifies the originator network.
    """
    evidence: dict[Ip4, EvidenceCounts] = {}
    spoofed_targets: set[Ip4] = set()
    for obs in spoofed_obs:
        if obs.decoded is None or not obs.scan.spoofed:
            continue
        spoofed_targets.add(obs.target)
        evidence.setdefault(obs.target, EvidenceCounts()).vuln += 1
    for resolver in open_set:
        if resolver not in spoofed_targets:
            evidence.setdefault(resolver, EvidenceCounts()).sav += 1
    return evidence


@dataclass(frozen=True)
class UnitVerdict:
    unit: Prefix | int
    verdict: str
    spoofed_hits: int
    sav_hits: int


def _verdict_for(vuln: int, sav: int) -> str:
    if vuln and sav:
        return I
    return S if vuln else NS


def verdicts(
    evidence: dict[Ip4, EvidenceCounts],
    granularity: str,
    table: RoutingTable | None = None,
    asn_map: AsnMap | None = None,
) -> tuple[list[UnitVerdict], int]:
    """Aggregate per-resolver evidence into per-unit verdicts.

    Returns (verdicts sorted by unit, count of resolvers that mapped to no
    unit at this granularity). Verdicts for uncovered addresses are never
    fabricated.
    """
    if granularity not in GRANULARITIES:
        raise ValueError(f"unknown granularity {granularity!r}")
    per_unit: dict[Prefix | int, EvidenceCounts] = {}
    unmapped = 0
    for ip, counts in evidence.items():
        unit: Prefix | int | None
        if granularity == SLASH24:
            unit = to_slash24(ip)
        elif granularity == PREFIX:
            unit = table.lookup(ip) if table is not None else None
        else:
            unit = asn_map.lookup(ip) if asn_map is not None else None
        if unit is None:
            unmapped += 1
            continue
        tally = per_unit.setdefault(unit, EvidenceCounts())
        tally.vuln += counts.vuln
        tally.sav += counts.sav
    result = [
        UnitVerdict(unit, _verdict_for(c.vuln, c.sav), c.vuln, c.sav)
        for unit, c in per_unit.items()
    ]
    result.sort(key=lambda v: (isinstance(v.unit, Prefix), v.unit))
    return result, unmapped


@dataclass(frozen=True)
class SpooferState:
    slash24: Prefix
    state: str
    timestamp: float


def load_spoofer_csv(path: str) -> list[SpooferState]:
    """CSV `slash24,state,timestamp`; timestamps are numeric (epoch)."""
    records = []
    with open(path, newline="", encoding="ascii") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 3 or row[1].strip() not in SPOOFER_STATES:
                raise NetParseError(f"{path}:{lineno}: bad spoofer row {row!r}")
            try:
                pfx = Prefix.from_text(row[0])
                ts = float(row[2])
            except (NetParseError, ValueError):
                raise NetParseError(
                    f"{path}:{lineno}: bad spoofer row {row!r}"
                ) from None
            if pfx.length != 24:
                raise NetParseError(f"{path}:{lineno}: spoofer unit must be a /24")
            records.append(SpooferState(pfx, row[1].strip(), ts))
    return records


def ingest_spoofer(records: Iterable[SpooferState]) -> dict[Prefix, str]:
    """Latest test wins per /24 (policies change; stale results mislead)."""
    latest: dict[Prefix, tuple[float, int, str]] = {}
    for order, rec in enumerate(records):
        existing = latest.get(rec.slash24)
        if existing is None or (rec.timestamp, order) >= existing[:2]:
            latest[rec.slash24] = (rec.timestamp, order, rec.state)
    return {pfx: state for pfx, (_, _, state) in latest.items()}


def outbound_verdicts(
    spoofer: dict[Prefix, str],
    forwarders: Iterable[tuple[Ip4, Ip4]],
) -> tuple[dict[Prefix, str], int]:
    """Merge Spoofer states with misbehaving-forwarder origins.

    blocked means filtered, received means vulnerable; rewritten and unknown
    are ambiguous and excluded. A misbehaving forwarder proves its /24 leaks
    foreign sources, so conflicts resolve vuln-wins (counted).
    """
    result: dict[Prefix, str] = {}
    for pfx, state in spoofer.items():
        if state == "blocked":
            result[pfx] = OUT_FILTERED
        elif state == "received":
            result[pfx] = OUT_VULN
    conflicts = 0
    for fwd_ip, _upstream in forwarders:
        pfx = to_slash24(fwd_ip)
        if result.get(pfx) == OUT_FILTERED:
            conflicts += 1
        result[pfx] = OUT_VULN
    return result, conflicts


@dataclass
class DirectionCrossTab:
    """Counts over comparable /24s (inbound-consistent and outbound-tested)."""

    none_filtered: int = 0  # no filtering in any direction
    inbound_only: int = 0  # inbound SAV present, outbound absent
    outbound_only: int = 0  # outbound SAV present, inbound absent
    both_filtered: int = 0

    @property
    def comparable(self) -> int:
        return (
            self.none_filtered
            + self.inbound_only
            + self.outbound_only
            + self.both_filtered
        )

    def as_dict(self) -> dict[str, int]:
        return {
            "comparable_slash24s": self.comparable,
            "no_filtering_any_direction": self.none_filtered,
            "inbound_filtering_only": self.inbound_only,
            "outbound_filtering_only": self.outbound_only,
            "filtering_both_directions": self.both_filtered,
        }


def cross_tab(
    inbound: Iterable[UnitVerdict], outbound: dict[Prefix, str]
) -> DirectionCrossTab:
    """Compare directions on the intersection of both datasets; inconsistent
    inbound units are dropped first (they assert nothing cleanly)."""
    tab = DirectionCrossTab()
    for uv in inbound:
        if uv.verdict == I or not isinstance(uv.unit, Prefix):
            continue
        out_state = outbound.get(uv.unit)
        if out_state is None:
            continue
        inbound_vuln = uv.verdict == S
        outbound_vuln = out_state == OUT_VULN
        if inbound_vuln and outbound_vuln:
            tab.none_filtered += 1
        elif inbound_vuln:
            tab.outbound_only += 1
        elif outbound_vuln:
            tab.inbound_only += 1
        else:
            tab.both_filtered += 1
    return tab


OPEN = "open"
CLOSED = "closed"


@dataclass(frozen=True)
class ResolverRecord:
    ip: Ip4
    proxy: str  # collector.FORWARDER | collector.NON_FORWARDER
    openness: str  # OPEN | CLOSED


@dataclass
class ResolverCensus:
    records: list[ResolverRecord] = field(default_factory=list)
    mixed_proxy_conflicts: int = 0

    def counts(self) -> dict[str, int]:
        out = {
            "forwarders": 0,
            "forwarders_open": 0,
            "forwarders_closed": 0,
            "non_forwarders": 0,
            "non_forwarders_open": 0,
            "non_forwarders_closed": 0,
        }
        for rec in self.records:
            fwd = rec.proxy == "forwarder"
            base = "forwarders" if fwd else "non_forwarders"
            out[base] += 1
            out[f"{base}_{'open' if rec.openness == OPEN else 'closed'}"] += 1
        return out


def resolver_census(
    deduped: ObservationLog, open_set: set[Ip4], spoofed_only: bool = True
) -> ResolverCensus:
    """Classify every probed host seen at the collector.

    A host is a non-forwarder as soon as it contacted us itself; hosts seen
    only through third parties are forwarders. Hosts showing both patterns
    are counted as non-forwarders and flagged.
    """
    direct: set[Ip4] = set()
    proxied: set[Ip4] = set()
    for obs in deduped:
        if obs.decoded is None:
            continue
        if spoofed_only and not obs.scan.spoofed:
            continue
        if obs.source_ip == obs.target:
            direct.add(obs.target)
        else:
            proxied.add(obs.target)
    census = ResolverCensus(mixed_proxy_conflicts=len(direct & proxied))
    for ip in sorted(direct | proxied):
        census.records.append(
            ResolverRecord(
                ip,
                "non-forwarder" if ip in direct else "forwarder",
                OPEN if ip in open_set else CLOSED,
            )
        )
    return census


def open_set_from_responses(responses: Iterable[ScanResponse]) -> set[Ip4]:
    """Convenience wrapper matching the scanner-side detector."""
    from savprobe.engine import detect_open

    return detect_open(responses)
