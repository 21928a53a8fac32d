"""Probe schedule construction.

Turns an aggregated routing table plus an exclusion list into a randomized
stream of probe pairs: one spoofed and one unspoofed query per in-scope host,
never more (the two-packets-per-host budget). The emitted order never puts
two pairs for the same /24 next to each other, so no network sees
back-to-back traffic beyond its own twin packets.

All randomness (ordering, nonces) is derived from keyed hashes of the
schedule seed rather than RNG state, so a schedule is reproducible
byte-for-byte across runs and Python versions.
"""

from __future__ import annotations

import heapq
import time
from typing import IO, Iterable, Iterator, NamedTuple

from savprobe.codec import ProbeDomain, ScanId, encode_domain
from savprobe.netmodel import (
    IP4_MAX,
    Ip4,
    NetParseError,
    Prefix,
    RoutingTable,
    format_ip4,
)
from savprobe import detrand

SCHEDULE_CSV_HEADER = "target,spoofed_src,spoofed_domain,unspoofed_domain"


class PlanError(ValueError):
    pass


class ExclusionList:
    """CIDR membership test for operator opt-outs; empty is legitimate."""

    def __init__(self, cidrs: Iterable[Prefix] = ()):
        self.cidrs: set[Prefix] = set(cidrs)
        self._masks = sorted({p.length for p in self.cidrs}, reverse=True)
        self._by_len = {
            length: {p.base for p in self.cidrs if p.length == length}
            for length in self._masks
        }

    @classmethod
    def load(cls, path: str) -> "ExclusionList":
        """One CIDR per line, '#' comments; a bare address means /32."""
        cidrs = []
        with open(path, encoding="ascii") as fh:
            for lineno, line in enumerate(fh, 1):
                body = line.split("#", 1)[0].strip()
                if not body:
                    continue
                if "/" not in body:
                    body += "/32"
                try:
                    cidrs.append(Prefix.from_text(body))
                except NetParseError as exc:
                    raise NetParseError(f"{path}:{lineno}: {exc}") from None
        return cls(cidrs)

    def contains(self, ip: Ip4) -> bool:
        for length in self._masks:
            if (ip & _MASKS[length]) in self._by_len[length]:
                return True
        return False

    def __len__(self) -> int:
        return len(self.cidrs)


_MASKS = [(0xFFFFFFFF << (32 - l)) & 0xFFFFFFFF if l else 0 for l in range(33)]


def enumerate_hosts(prefix: Prefix) -> Iterator[Ip4]:
    """Probe targets of a prefix, streamed.

    Network and broadcast addresses are skipped (per /24 block for short
    prefixes, per block for /24../30); /31 and /32 are probed fully since
    point-to-point links are legitimate hosts.
    """
    if prefix.length >= 31:
        yield from range(prefix.base, prefix.last + 1)
    elif prefix.length >= 24:
        yield from range(prefix.base + 1, prefix.last)
    else:
        for block in range(prefix.base, prefix.last + 1, 256):
            yield from range(block + 1, block + 255)


def is_probed_host(ip: Ip4, prefix: Prefix) -> bool:
    """Would enumerate_hosts(prefix) emit this address?"""
    if not prefix.contains(ip):
        return False
    if prefix.length >= 31:
        return True
    if prefix.length >= 24:
        return ip != prefix.base and ip != prefix.last
    return ip & 0xFF not in (0, 255)


def spoof_source(target: Ip4, prefix: Prefix) -> Ip4:
    """Impersonated neighbor for a target: the next address, staying inside
    the prefix (the previous one for the last host). A /32 has no neighbor,
    so the literal next address is used there."""
    for candidate in (target + 1, target - 1):
        if is_probed_host(candidate, prefix) and candidate != target:
            return candidate
    return target - 1 if target == IP4_MAX else target + 1


class ProbePair(NamedTuple):
    target: Ip4
    spoofed_src: Ip4
    spoofed_domain: ProbeDomain
    unspoofed_domain: ProbeDomain


class Schedule:
    """Arranged probe pairs; domains are derived lazily so iteration is
    repeatable and memory stays proportional to the target count."""

    def __init__(
        self,
        pairs: list[tuple[Ip4, Ip4]],
        zone: str,
        seed: int,
        rate: float,
        run: int = 1,
        skipped_excluded: int = 0,
    ):
        self._pairs = pairs
        self.zone = zone
        self.seed = seed
        self.rate = rate
        self.run = run
        self.skipped_excluded = skipped_excluded
        self._rand = detrand.Stream(seed)

    def __len__(self) -> int:
        return len(self._pairs)

    @property
    def txid_key(self) -> bytes:
        return self._rand.key(b"txid")

    def __iter__(self) -> Iterator[ProbePair]:
        spoofed = ScanId(True, self.run)
        unspoofed = ScanId(False, self.run)
        for target, src in self._pairs:
            yield ProbePair(
                target,
                src,
                encode_domain(
                    self._rand.nonce(b"ns", target, self.run), target, spoofed, self.zone
                ),
                encode_domain(
                    self._rand.nonce(b"nn", target, self.run), target, unspoofed, self.zone
                ),
            )


def build_schedule(
    table: RoutingTable,
    excl: ExclusionList,
    zone: str,
    seed: int,
    rate: float,
    run: int = 1,
) -> Schedule:
    """Enumerate, exclude, and arrange probe pairs for a routing table.

    Raises PlanError when nothing is left to probe. The arrangement is a
    seeded permutation with no two consecutive pairs in the same /24
    whenever the target multiset admits one.
    """
    rand = detrand.Stream(seed)
    groups: dict[Ip4, list[tuple[Ip4, Ip4]]] = {}
    skipped = 0
    for prefix in table.entries:
        for target in enumerate_hosts(prefix):
            if excl.contains(target):
                skipped += 1
                continue
            src = spoof_source(target, prefix)
            if excl.contains(src):
                alt = 2 * target - src  # the other neighbor
                if is_probed_host(alt, prefix) and not excl.contains(alt):
                    src = alt
                else:
                    skipped += 1
                    continue
            groups.setdefault(target & 0xFFFFFF00, []).append((target, src))
    if not groups:
        raise PlanError("no targets remain after aggregation and exclusion")
    pairs = _arrange(groups, rand)
    return Schedule(pairs, zone, seed, rate, run, skipped_excluded=skipped)


def _arrange(
    groups: dict[Ip4, list[tuple[Ip4, Ip4]]], rand: detrand.Stream
) -> list[tuple[Ip4, Ip4]]:
    """Seeded arrangement with no two adjacent items from the same /24.

    Uniform weighted choice over remaining pairs (a flat bag of group keys),
    rejecting the previous group, plus the standard forced-pick rule: when
    one group holds more than half of what remains it must be emitted now or
    the constraint becomes unsatisfiable. Infeasible inputs (one /24
    dominating past the halfway point) degrade to best effort.
    """
    for base, members in groups.items():
        members.sort(key=lambda m: rand.u64(b"member", m[0]))
    count = {base: len(ms) for base, ms in groups.items()}
    bag: list[Ip4] = []
    for base, c in count.items():
        bag.extend([base] * c)
    heap = [(-c, base) for base, c in count.items()]
    heapq.heapify(heap)
    total = len(bag)
    out: list[tuple[Ip4, Ip4]] = []
    last: Ip4 | None = None
    for step in range(total):
        remaining = total - step
        while heap and -heap[0][0] != count[heap[0][1]]:
            heapq.heappop(heap)  # stale counts
        cmax, gmax = -heap[0][0], heap[0][1]
        choose: Ip4 | None = None
        if 2 * cmax > remaining and gmax != last:
            choose = gmax
            bag.remove(gmax)  # rare: only under forced picks
        else:
            for attempt in range(64):
                idx = rand.u64(b"pick", step, attempt) % len(bag)
                base = bag[idx]
                if base == last and count[base] < remaining:
                    continue
                choose = base
                bag[idx] = bag[-1]
                bag.pop()
                break
            if choose is None:  # heavily skewed bag: deterministic fallback
                idx = next(
                    (i for i, b in enumerate(bag) if b != last), 0
                )
                choose = bag[idx]
                bag[idx] = bag[-1]
                bag.pop()
        out.append(groups[choose].pop())
        count[choose] -= 1
        heapq.heappush(heap, (-count[choose], choose))
        last = choose
    return out


def write_schedule_csv(schedule: Schedule, fh: IO[str]) -> int:
    """Dry-run emission; returns the pair count."""
    fh.write(SCHEDULE_CSV_HEADER + "\n")
    n = 0
    for pair in schedule:
        fh.write(
            f"{format_ip4(pair.target)},{format_ip4(pair.spoofed_src)},"
            f"{pair.spoofed_domain.name},{pair.unspoofed_domain.name}\n"
        )
        n += 1
    return n


class TokenBucket:
    """Packets-per-second limiter for the sender loop.

    The clock and sleep functions are injectable so simulated runs pay no
    wall-clock cost.
    """

    def __init__(
        self,
        rate: float,
        burst: int = 64,
        clock=time.monotonic,
        sleep=time.sleep,
    ):
        if rate <= 0:
            raise PlanError(f"rate must be positive, got {rate}")
        self.rate = rate
        self.burst = max(1, burst)
        self._clock = clock
        self._sleep = sleep
        self._tokens = float(self.burst)
        self._stamp = clock()

    def take(self) -> None:
        while True:
            now = self._clock()
            self._tokens = min(
                self.burst, self._tokens + (now - self._stamp) * self.rate
            )
            self._stamp = now
            if self._tokens >= 1.0:
                self._tokens -= 1.0
                return
            self._sleep((1.0 - self._tokens) / self.rate)
