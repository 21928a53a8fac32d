"""Authoritative responder for the scan zone and its observation log.

Every A query landing inside the zone is the measurement signal: it proves a
resolver (or its upstream) carried a probe query out of the tested network.
Queries are answered with a fixed benign A record so resolver behavior stays
uniform, logged losslessly, and deduplicated offline; names that do not
decode as probe domains are quarantined rather than dropped, since noise is
worth counting.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import IO, Iterator

from savprobe import codec
from savprobe.codec import DnsMessage, ResourceRecord, ScanId
from savprobe.netmodel import Ip4, format_ip4, parse_ip4

DEFAULT_TTL = 60
FLUSH_INTERVAL = 1.0


@dataclass
class QueryObservation:
    source_ip: Ip4
    raw_name: str
    ts: float
    decoded: tuple[str, Ip4, ScanId] | None

    @property
    def target(self) -> Ip4 | None:
        return self.decoded[1] if self.decoded else None

    @property
    def scan(self) -> ScanId | None:
        return self.decoded[2] if self.decoded else None

    def to_json(self) -> str:
        return json.dumps(
            {"src": format_ip4(self.source_ip), "name": self.raw_name, "ts": self.ts}
        )


class ObservationLog:
    """Append-only observation sequence bound to one scan zone."""

    def __init__(self, zone: str, sink: IO[str] | None = None):
        self.zone = zone.rstrip(".")
        self._entries: list[QueryObservation] = []
        self._sink = sink
        self._lock = threading.Lock()
        self._last_flush = time.monotonic()

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[QueryObservation]:
        return iter(self._entries)

    def observe(self, source_ip: Ip4, name: str, ts: float) -> QueryObservation:
        obs = QueryObservation(
            source_ip, name, ts, codec.decode_domain(name, self.zone)
        )
        with self._lock:
            self._entries.append(obs)
            if self._sink is not None:
                self._sink.write(obs.to_json() + "\n")
                now = time.monotonic()
                if now - self._last_flush >= FLUSH_INTERVAL:
                    self._sink.flush()
                    self._last_flush = now
        return obs

    def flush(self) -> None:
        with self._lock:
            if self._sink is not None:
                self._sink.flush()

    def quarantined(self) -> list[QueryObservation]:
        return [obs for obs in self._entries if obs.decoded is None]

    @classmethod
    def load(cls, path: str, zone: str) -> "ObservationLog":
        log = cls(zone)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                log.observe(parse_ip4(row["src"]), row["name"], row["ts"])
        return log


def dedup(log: ObservationLog) -> ObservationLog:
    """First-seen per (source, name), order preserved. Resolvers re-ask the
    same name through caching churn; only unique tuples count as evidence.
    Name comparison is case-folded (0x20-mangled retries are the same name).
    """
    out = ObservationLog(log.zone)
    seen: set[tuple[Ip4, str]] = set()
    for obs in log:
        key = (obs.source_ip, obs.raw_name.lower())
        if key in seen:
            continue
        seen.add(key)
        out.observe(obs.source_ip, obs.raw_name, obs.ts)
    return out


FORWARDER = "forwarder"
NON_FORWARDER = "non-forwarder"


def classify_proxy(obs: QueryObservation) -> str:
    """A resolver that contacted us itself is a non-forwarder; anything
    arriving from a third address was proxied on behalf of the target."""
    if obs.decoded is None:
        raise ValueError("cannot classify a quarantined observation")
    return NON_FORWARDER if obs.source_ip == obs.target else FORWARDER


@dataclass
class ResponderStats:
    served: int = 0
    refused: int = 0
    malformed: int = 0
    non_a_queries: int = 0
    quarantined: int = 0


@dataclass
class ZoneResponder:
    """Pure request handler: datagram in, datagram out, observation logged.

    Both the UDP server and the simulator drive this, so the collector
    behaves identically on the real wire and under test.
    """

    zone: str
    log: ObservationLog
    answer_ip: Ip4 = parse_ip4("192.0.2.53")
    ttl: int = DEFAULT_TTL
    stats: ResponderStats = field(default_factory=ResponderStats)

    def __post_init__(self):
        self.zone = self.zone.rstrip(".")
        self._zone_labels = [l.lower() for l in self.zone.split(".")]

    def _in_zone(self, name: str) -> bool:
        labels = [l.lower() for l in name.rstrip(".").split(".")]
        if len(labels) < len(self._zone_labels):
            return False
        return labels[len(labels) - len(self._zone_labels) :] == self._zone_labels

    def handle(self, payload: bytes, source_ip: Ip4, ts: float) -> bytes | None:
        """Response datagram payload, or None when the input is ignored."""
        query = codec.decode_dns(payload)
        if query is None or query.qr or not query.questions:
            self.stats.malformed += 1
            return None
        qname, qtype, qclass = query.questions[0]
        if query.opcode != 0 or qclass != codec.QCLASS_IN or not self._in_zone(qname):
            self.stats.refused += 1
            return codec.encode_dns(
                codec.build_response(query, None, rcode=codec.REFUSED, aa=False)
            )
        if qtype == codec.QTYPE_A:
            obs = self.log.observe(source_ip, qname, ts)
            if obs.decoded is None:
                self.stats.quarantined += 1
            self.stats.served += 1
            return codec.encode_dns(
                codec.build_response(query, self.answer_ip, ttl=self.ttl)
            )
        # minimal apex SOA/NS so real resolvers can complete resolution
        self.stats.non_a_queries += 1
        answers: list[ResourceRecord] = []
        if qname.rstrip(".").lower() == self.zone.lower():
            if qtype == codec.QTYPE_SOA:
                answers.append(self._soa_record())
            elif qtype == codec.QTYPE_NS:
                answers.append(self._ns_record())
        reply = DnsMessage(
            txid=query.txid,
            qr=True,
            aa=True,
            rd=query.rd,
            ra=True,
            rcode=codec.NOERROR,
            questions=list(query.questions),
            answers=answers,
        )
        return codec.encode_dns(reply)

    def _soa_record(self) -> ResourceRecord:
        rdata = (
            codec.encode_name(f"ns.{self.zone}")
            + codec.encode_name(f"hostmaster.{self.zone}")
            + (1).to_bytes(4, "big")  # serial
            + (3600).to_bytes(4, "big")
            + (600).to_bytes(4, "big")
            + (86400).to_bytes(4, "big")
            + (self.ttl).to_bytes(4, "big")
        )
        return ResourceRecord(self.zone, codec.QTYPE_SOA, codec.QCLASS_IN, self.ttl, rdata)

    def _ns_record(self) -> ResourceRecord:
        return ResourceRecord(
            self.zone,
            codec.QTYPE_NS,
            codec.QCLASS_IN,
            self.ttl,
            codec.encode_name(f"ns.{self.zone}"),
        )


class AuthServer:
    """UDP front end around ZoneResponder; port 53 needs privileges, tests
    bind an ephemeral port."""

    def __init__(
        self,
        responder: ZoneResponder,
        host: str = "0.0.0.0",
        port: int = 53,
    ):
        self.responder = responder
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self._sock.settimeout(0.2)
        self.address = self._sock.getsockname()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def run_forever(self) -> None:
        try:
            while not self._stop.is_set():
                try:
                    data, addr = self._sock.recvfrom(4096)
                except socket.timeout:
                    continue
                except OSError:
                    break
                reply = self.responder.handle(
                    data, parse_ip4(addr[0]), time.time()
                )
                if reply is not None:
                    self._sock.sendto(reply, addr)
        finally:
            self.responder.log.flush()
            self._sock.close()

    def start(self) -> None:
        self._thread = threading.Thread(target=self.run_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve(
    zone: str,
    log: ObservationLog,
    answer_ip: Ip4,
    host: str = "0.0.0.0",
    port: int = 53,
    ttl: int = DEFAULT_TTL,
) -> None:
    """Blocking entry point: answer and record until interrupted."""
    responder = ZoneResponder(zone, log, answer_ip=answer_ip, ttl=ttl)
    AuthServer(responder, host=host, port=port).run_forever()
