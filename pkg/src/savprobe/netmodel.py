"""Address, prefix, AS and geolocation model.

Everything downstream (schedule building, observation mapping, verdicts)
works on 32-bit integers for IPv4 addresses; text forms only appear at the
file-format boundaries. The three lookup structures (routing table, ASN map,
geo ranges) are built once and are read-only afterwards, so they are safe to
share across workers.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from typing import Iterable, Iterator, NamedTuple

Ip4 = int  # 32-bit unsigned, host order internally, network order on the wire

IP4_MAX = 0xFFFFFFFF


class NetParseError(ValueError):
    """Malformed address, prefix or map input; message names the offender."""


def parse_ip4(text: str) -> Ip4:
    parts = text.strip().split(".")
    if len(parts) != 4:
        raise NetParseError(f"bad IPv4 address {text!r}")
    value = 0
    for part in parts:
        if not part.isdigit() or len(part) > 3:
            raise NetParseError(f"bad IPv4 address {text!r}")
        octet = int(part)
        if octet > 255:
            raise NetParseError(f"bad IPv4 address {text!r}")
        value = (value << 8) | octet
    return value


def format_ip4(ip: Ip4) -> str:
    return f"{(ip >> 24) & 0xFF}.{(ip >> 16) & 0xFF}.{(ip >> 8) & 0xFF}.{ip & 0xFF}"


def _mask(length: int) -> int:
    return (0xFFFFFFFF << (32 - length)) & 0xFFFFFFFF if length else 0


class Prefix(NamedTuple):
    """CIDR block; `base` always has the host bits zeroed."""

    base: Ip4
    length: int

    @classmethod
    def make(cls, base: Ip4, length: int) -> "Prefix":
        if not 0 <= length <= 32:
            raise NetParseError(f"bad prefix length /{length}")
        if base & ~_mask(length) & IP4_MAX:
            raise NetParseError(
                f"prefix {format_ip4(base)}/{length} has host bits set"
            )
        return cls(base, length)

    @classmethod
    def of(cls, ip: Ip4, length: int) -> "Prefix":
        """The length-sized block containing ip (host bits masked off)."""
        if not 0 <= length <= 32:
            raise NetParseError(f"bad prefix length /{length}")
        return cls(ip & _mask(length), length)

    @classmethod
    def from_text(cls, text: str) -> "Prefix":
        body = text.strip()
        if "/" not in body:
            raise NetParseError(f"bad prefix {text!r}")
        addr, _, length_s = body.partition("/")
        if not length_s.isdigit():
            raise NetParseError(f"bad prefix {text!r}")
        return cls.make(parse_ip4(addr), int(length_s))

    @property
    def last(self) -> Ip4:
        return self.base | (~_mask(self.length) & IP4_MAX)

    @property
    def size(self) -> int:
        return 1 << (32 - self.length)

    def contains(self, ip: Ip4) -> bool:
        return (ip & _mask(self.length)) == self.base

    def covers(self, other: "Prefix") -> bool:
        return self.length <= other.length and (
            other.base & _mask(self.length)
        ) == self.base

    def slash24s(self) -> Iterator["Prefix"]:
        """The /24 blocks intersecting this prefix (one for length > 24)."""
        if self.length >= 24:
            yield Prefix.of(self.base, 24)
        else:
            for base in range(self.base, self.last + 1, 256):
                yield Prefix(base, 24)

    def __str__(self) -> str:
        return f"{format_ip4(self.base)}/{self.length}"


def to_slash24(ip: Ip4) -> Prefix:
    return Prefix(ip & 0xFFFFFF00, 24)


def aggregate_prefixes(prefixes: Iterable[Prefix]) -> list[Prefix]:
    """Keep only the covering prefixes: no survivor is contained in another.

    Sorting by (base, length) puts every cover immediately ahead of the
    prefixes it contains, so one sweep with the last kept entry suffices
    (CIDR blocks are nested or disjoint, never partially overlapping).
    """
    result: list[Prefix] = []
    for pfx in sorted(set(prefixes)):
        if pfx.length == 0:
            raise NetParseError("default route 0.0.0.0/0 is not a scan target")
        if result and result[-1].covers(pfx):
            continue
        result.append(pfx)
    return result


class RoutingTable:
    """Aggregated BGP-style table with longest-prefix-match lookup.

    Lookup scans the present prefix lengths from most to least specific and
    tests set membership of the masked address: O(33) per lookup, no trie
    needed. Read-only after construction.
    """

    def __init__(self, prefixes: Iterable[Prefix]):
        self.entries: tuple[Prefix, ...] = tuple(aggregate_prefixes(prefixes))
        by_len: dict[int, set[Ip4]] = {}
        for pfx in self.entries:
            by_len.setdefault(pfx.length, set()).add(pfx.base)
        self._lengths = sorted(by_len, reverse=True)
        self._by_len = by_len

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, ip: Ip4) -> Prefix | None:
        for length in self._lengths:
            base = ip & _mask(length)
            if base in self._by_len[length]:
                return Prefix(base, length)
        return None

    def covers(self, ip: Ip4) -> bool:
        return self.lookup(ip) is not None

    def slash24_universe(self) -> set[Prefix]:
        """All /24 blocks intersecting any table entry."""
        blocks: set[Prefix] = set()
        for entry in self.entries:
            blocks.update(entry.slash24s())
        return blocks


def aggregate_table(prefixes: Iterable[Prefix]) -> RoutingTable:
    return RoutingTable(prefixes)


def lpm_lookup(table: RoutingTable, ip: Ip4) -> Prefix | None:
    return table.lookup(ip)


class AsnMap:
    """Longest-match prefix-to-ASN map.

    Repeated prefixes with different origins (MOAS) resolve to the smallest
    ASN; the conflicts are kept for diagnostics instead of being silently
    overwritten. Unmapped addresses yield None, never a fabricated ASN.
    """

    def __init__(self, mappings: Iterable[tuple[Prefix, int]]):
        chosen: dict[Prefix, int] = {}
        self.moas_conflicts: dict[Prefix, set[int]] = {}
        for pfx, asn in mappings:
            if pfx in chosen and chosen[pfx] != asn:
                self.moas_conflicts.setdefault(pfx, {chosen[pfx]}).add(asn)
                chosen[pfx] = min(chosen[pfx], asn)
            else:
                chosen.setdefault(pfx, asn)
        self._asn_of: dict[Prefix, int] = chosen
        by_len: dict[int, set[Ip4]] = {}
        for pfx in chosen:
            by_len.setdefault(pfx.length, set()).add(pfx.base)
        self._lengths = sorted(by_len, reverse=True)
        self._by_len = by_len

    def lookup(self, ip: Ip4) -> int | None:
        for length in self._lengths:
            base = ip & _mask(length)
            if base in self._by_len[length]:
                return self._asn_of[Prefix(base, length)]
        return None

    def lookup_prefix(self, pfx: Prefix) -> int | None:
        """ASN owning the block (longest match on its base address)."""
        return self.lookup(pfx.base)


def asn_of(asn_map: AsnMap, ip: Ip4) -> int | None:
    return asn_map.lookup(ip)


class GeoMap:
    """Sorted, non-overlapping (start, end, country) ranges; bisect lookup."""

    def __init__(self, ranges: Iterable[tuple[Ip4, Ip4, str]]):
        rows = sorted(ranges)
        last_end = -1
        for start, end, country in rows:
            if start > end:
                raise NetParseError(
                    f"geo range {format_ip4(start)}-{format_ip4(end)} reversed"
                )
            if start <= last_end:
                raise NetParseError(
                    f"geo range starting {format_ip4(start)} overlaps previous"
                )
            last_end = end
        self._starts = [row[0] for row in rows]
        self._rows = rows

    def lookup(self, ip: Ip4) -> str | None:
        idx = bisect_right(self._starts, ip) - 1
        if idx < 0:
            return None
        start, end, country = self._rows[idx]
        return country if ip <= end else None

    def ranges_overlapping(
        self, lo: Ip4, hi: Ip4
    ) -> Iterator[tuple[Ip4, Ip4, str]]:
        """Ranges intersecting [lo, hi], clipped to it."""
        idx = max(bisect_right(self._starts, lo) - 1, 0)
        for start, end, country in self._rows[idx:]:
            if start > hi:
                break
            if end >= lo:
                yield max(start, lo), min(end, hi), country


def country_of(geo: GeoMap, ip: Ip4) -> str | None:
    return geo.lookup(ip)


def load_bgp_table(path: str) -> tuple[RoutingTable, int]:
    """Read one prefix per line ('#' comments); returns (table, defaults_dropped).

    Default routes are dropped at ingestion rather than rejected so a raw
    table dump does not kill a run; the count is surfaced to the caller.
    """
    prefixes: list[Prefix] = []
    dropped_defaults = 0
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            try:
                pfx = Prefix.from_text(body)
            except NetParseError as exc:
                raise NetParseError(f"{path}:{lineno}: {exc}") from None
            if pfx.length == 0:
                dropped_defaults += 1
                continue
            prefixes.append(pfx)
    return RoutingTable(prefixes), dropped_defaults


def load_asn_map(path: str) -> AsnMap:
    """CSV `prefix,asn`, '#' comments allowed."""
    mappings: list[tuple[Prefix, int]] = []
    with open(path, newline="", encoding="ascii") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 2 or not row[1].strip().isdigit():
                raise NetParseError(f"{path}:{lineno}: bad asn map row {row!r}")
            try:
                mappings.append((Prefix.from_text(row[0]), int(row[1])))
            except NetParseError as exc:
                raise NetParseError(f"{path}:{lineno}: {exc}") from None
    return AsnMap(mappings)


def load_geo_map(path: str) -> GeoMap:
    """CSV `start_ip,end_ip,country`."""
    ranges: list[tuple[Ip4, Ip4, str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 3 or not row[2].strip():
                raise NetParseError(f"{path}:{lineno}: bad geo row {row!r}")
            try:
                ranges.append(
                    (parse_ip4(row[0]), parse_ip4(row[1]), row[2].strip())
                )
            except NetParseError as exc:
                raise NetParseError(f"{path}:{lineno}: {exc}") from None
    return GeoMap(ranges)
