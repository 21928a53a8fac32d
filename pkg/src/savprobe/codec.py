"""Probe artifacts: scan-domain encoding, DNS wire messages, raw datagrams.

A probe domain looks like `qGPDBe.02ae52c7.s1.example.com`: a 6-char nonce,
the probed address as 8 lowercase hex digits, a scan identifier whose tag
separates the spoofed stream (`s<n>`) from the unspoofed one (`n<n>`), and
the scan zone. Decoding is case-insensitive (DNS names are); the nonce is
returned as received.

All functions here are pure and safe to call from concurrent workers. The
DNS decoder is total: arbitrary bytes yield a message or None, never an
exception. Name compression is accepted on decode and never emitted.
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

from savprobe.fastpath import ipv4_udp_datagram, parse_ipv4_udp
from savprobe.netmodel import Ip4, format_ip4

# rcodes we care about
NOERROR = 0
SERVFAIL = 2
NXDOMAIN = 3
REFUSED = 5

QTYPE_A = 1
QTYPE_NS = 2
QTYPE_SOA = 6
QCLASS_IN = 1

MAX_PROBE_PAYLOAD = 512  # plain UDP DNS; we never need EDNS-sized probes

_NONCE_RE = re.compile(r"^[A-Za-z0-9]{6}$")
_HEX_RE = re.compile(r"^[0-9a-fA-F]{8}$")
_SCANID_RE = re.compile(r"^([sn])([0-9]{1,6})$", re.IGNORECASE)

_HEADER = struct.Struct(">HHHHHH")


class EncodeError(ValueError):
    pass


class ScanId(NamedTuple):
    spoofed: bool
    seq: int

    def __str__(self) -> str:
        return f"{'s' if self.spoofed else 'n'}{self.seq}"

    @classmethod
    def parse(cls, text: str) -> "ScanId | None":
        m = _SCANID_RE.match(text)
        if not m:
            return None
        return cls(m.group(1).lower() == "s", int(m.group(2)))


class ProbeDomain(NamedTuple):
    nonce: str
    target: Ip4
    scan: ScanId
    zone: str

    @property
    def name(self) -> str:
        return f"{self.nonce}.{self.target:08x}.{self.scan}.{self.zone}"


def encode_domain(nonce: str, target: Ip4, scan: ScanId, zone: str) -> ProbeDomain:
    """Build a probe domain; raises EncodeError when it cannot fit."""
    if not _NONCE_RE.match(nonce):
        raise EncodeError(f"nonce {nonce!r} must be 6 alphanumeric chars")
    zone = zone.rstrip(".")
    if not zone:
        raise EncodeError("empty zone")
    domain = ProbeDomain(nonce, target, scan, zone)
    encode_name(domain.name)  # label/length validation
    return domain


def decode_domain(name: str, zone: str) -> tuple[str, Ip4, ScanId] | None:
    """Inverse of encode_domain; None for anything that is not ours.

    Rejects are expected (internet noise reaches the collector) so this
    never raises: callers count and quarantine.
    """
    labels = name.rstrip(".").split(".")
    zone_labels = zone.rstrip(".").split(".")
    if len(labels) != len(zone_labels) + 3:
        return None
    tail = [l.lower() for l in labels[3:]]
    if tail != [l.lower() for l in zone_labels]:
        return None
    nonce, hexip, scantag = labels[0], labels[1], labels[2]
    if not _NONCE_RE.match(nonce) or not _HEX_RE.match(hexip):
        return None
    scan = ScanId.parse(scantag)
    if scan is None:
        return None
    return nonce, int(hexip, 16), scan


def txid_for(target: Ip4, scan: ScanId, key: bytes) -> int:
    """Keyed 16-bit transaction id so late responses match statelessly."""
    digest = hashlib.blake2b(
        target.to_bytes(4, "big") + str(scan).encode("ascii"),
        digest_size=2,
        key=key,
    ).digest()
    return int.from_bytes(digest, "big")


@dataclass
class ResourceRecord:
    name: str
    rtype: int
    rclass: int
    ttl: int
    rdata: bytes

    @classmethod
    def a_record(cls, name: str, ip: Ip4, ttl: int) -> "ResourceRecord":
        return cls(name, QTYPE_A, QCLASS_IN, ttl, ip.to_bytes(4, "big"))

    def rdata_ip(self) -> str | None:
        if self.rtype == QTYPE_A and len(self.rdata) == 4:
            return format_ip4(int.from_bytes(self.rdata, "big"))
        return None


@dataclass
class DnsMessage:
    txid: int = 0
    qr: bool = False
    opcode: int = 0
    aa: bool = False
    tc: bool = False
    rd: bool = True
    ra: bool = False
    rcode: int = NOERROR
    questions: list[tuple[str, int, int]] = field(default_factory=list)
    answers: list[ResourceRecord] = field(default_factory=list)

    @property
    def question_name(self) -> str | None:
        return self.questions[0][0] if self.questions else None


def encode_name(name: str) -> bytes:
    """RFC 1035 label sequence, never compressed."""
    out = bytearray()
    for label in name.rstrip(".").split("."):
        raw = label.encode("ascii", "strict") if label else b""
        if not raw:
            raise EncodeError(f"empty label in {name!r}")
        if len(raw) > 63:
            raise EncodeError(f"label {label!r} exceeds 63 octets")
        out.append(len(raw))
        out += raw
    out.append(0)
    if len(out) > 255:
        raise EncodeError(f"name {name!r} exceeds 255 octets on the wire")
    return bytes(out)


def encode_dns(msg: DnsMessage) -> bytes:
    flags = (
        (msg.qr << 15)
        | ((msg.opcode & 0xF) << 11)
        | (msg.aa << 10)
        | (msg.tc << 9)
        | (msg.rd << 8)
        | (msg.ra << 7)
        | (msg.rcode & 0xF)
    )
    out = bytearray(
        _HEADER.pack(
            msg.txid, flags, len(msg.questions), len(msg.answers), 0, 0
        )
    )
    for qname, qtype, qclass in msg.questions:
        out += encode_name(qname)
        out += struct.pack(">HH", qtype, qclass)
    for rr in msg.answers:
        out += encode_name(rr.name)
        out += struct.pack(">HHIH", rr.rtype, rr.rclass, rr.ttl, len(rr.rdata))
        out += rr.rdata
    return bytes(out)


def _decode_name(data: bytes, pos: int) -> tuple[str, int] | None:
    """Decode a possibly compressed name; returns (name, next_pos).

    Pointer targets must strictly decrease, which bounds every walk and
    rejects pointer loops. Label bytes decode via latin-1 so noise names
    survive for quarantine logging.
    """
    labels: list[str] = []
    jumps = 0
    end = -1  # position after the name in the original stream
    limit = pos
    total = 0
    while True:
        if pos >= len(data):
            return None
        length = data[pos]
        if length & 0xC0 == 0xC0:
            if pos + 1 >= len(data):
                return None
            ptr = ((length & 0x3F) << 8) | data[pos + 1]
            if end < 0:
                end = pos + 2
            if ptr >= limit:
                return None
            limit = ptr
            pos = ptr
            jumps += 1
            if jumps > 64:
                return None
            continue
        if length & 0xC0:
            return None  # 0x40/0x80 label types are not in use
        if length == 0:
            if end < 0:
                end = pos + 1
            return ".".join(labels), end
        if pos + 1 + length > len(data):
            return None
        total += length + 1
        if total > 255:
            return None
        labels.append(data[pos + 1 : pos + 1 + length].decode("latin-1"))
        pos += 1 + length


def decode_dns(data: bytes) -> DnsMessage | None:
    """Total parser: a message or None, never an exception.

    Trailing bytes after the counted records are tolerated (middleboxes pad).
    """
    try:
        if len(data) < 12:
            return None
        txid, flags, qdcount, ancount, _, _ = _HEADER.unpack_from(data, 0)
        msg = DnsMessage(
            txid=txid,
            qr=bool(flags & 0x8000),
            opcode=(flags >> 11) & 0xF,
            aa=bool(flags & 0x0400),
            tc=bool(flags & 0x0200),
            rd=bool(flags & 0x0100),
            ra=bool(flags & 0x0080),
            rcode=flags & 0xF,
        )
        pos = 12
        for _ in range(qdcount):
            decoded = _decode_name(data, pos)
            if decoded is None:
                return None
            qname, pos = decoded
            if pos + 4 > len(data):
                return None
            qtype, qclass = struct.unpack_from(">HH", data, pos)
            pos += 4
            msg.questions.append((qname, qtype, qclass))
        for _ in range(ancount):
            decoded = _decode_name(data, pos)
            if decoded is None:
                return None
            rname, pos = decoded
            if pos + 10 > len(data):
                return None
            rtype, rclass, ttl, rdlen = struct.unpack_from(">HHIH", data, pos)
            pos += 10
            if pos + rdlen > len(data):
                return None
            msg.answers.append(
                ResourceRecord(rname, rtype, rclass, ttl, data[pos : pos + rdlen])
            )
            pos += rdlen
        return msg
    except (struct.error, IndexError, UnicodeDecodeError):
        return None


def build_query(domain: ProbeDomain | str, txid: int) -> DnsMessage:
    """Recursion-desired A/IN question for the probe domain."""
    name = domain.name if isinstance(domain, ProbeDomain) else domain
    return DnsMessage(
        txid=txid, qr=False, rd=True, questions=[(name, QTYPE_A, QCLASS_IN)]
    )


def build_response(
    query: DnsMessage,
    answer_ip: Ip4 | None,
    ttl: int = 60,
    rcode: int = NOERROR,
    aa: bool = True,
) -> DnsMessage:
    """Reply to `query`, echoing its question and txid."""
    answers = []
    if answer_ip is not None and rcode == NOERROR and query.questions:
        answers.append(
            ResourceRecord.a_record(query.questions[0][0], answer_ip, ttl)
        )
    return DnsMessage(
        txid=query.txid,
        qr=True,
        aa=aa,
        rd=query.rd,
        ra=rcode == NOERROR,
        rcode=rcode,
        questions=list(query.questions),
        answers=answers,
    )


def build_raw(
    src: Ip4,
    dst: Ip4,
    sport: int,
    dport: int,
    dns: DnsMessage | bytes,
    ttl: int = 64,
) -> bytes:
    """IPv4+UDP datagram carrying a DNS message, checksums filled in."""
    payload = dns if isinstance(dns, bytes) else encode_dns(dns)
    if not payload:
        raise EncodeError("refusing to emit an empty DNS payload")
    if len(payload) > MAX_PROBE_PAYLOAD:
        raise EncodeError(
            f"DNS payload of {len(payload)} bytes exceeds {MAX_PROBE_PAYLOAD}"
        )
    ident = payload[0] << 8 | payload[1] if len(payload) >= 2 else 0
    return ipv4_udp_datagram(src, dst, sport, dport, payload, ident=ident, ttl=ttl)


class ScanReply(NamedTuple):
    responder: Ip4
    sport: int
    txid: int
    rcode: int
    qname: str | None


def parse_response(datagram: bytes) -> ScanReply | None:
    """Extract (responder, sport, txid, rcode, question name) from a raw
    datagram; None for non-UDP, non-DNS or truncated input."""
    parsed = parse_ipv4_udp(datagram)
    if parsed is None:
        return None
    src, _dst, sport, _dport, payload = parsed
    msg = decode_dns(payload)
    if msg is None or not msg.qr:
        return None
    return ScanReply(src, sport, msg.txid, msg.rcode, msg.question_name)
