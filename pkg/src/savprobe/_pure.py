"""Pure-Python packet kernels; behavioral twin of the compiled module.

These three functions sit on the per-packet hot path of the scanner and the
simulator. The compiled module in `_native.pyx` must stay bit-for-bit
equivalent; `tests/test_kernels.py` holds the differential checks.
"""

import struct

_IP_HEADER = struct.Struct(">BBHHHBBHII")
_UDP_HEADER = struct.Struct(">HHHH")
_PSEUDO = struct.Struct(">IIBBH")


def checksum16(data: bytes) -> int:
    """RFC 1071 one's-complement checksum, network byte order."""
    if len(data) & 1:
        data = data + b"\x00"
    total = sum(struct.unpack(f">{len(data) >> 1}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def ipv4_udp_datagram(
    src: int,
    dst: int,
    sport: int,
    dport: int,
    payload: bytes,
    ident: int = 0,
    ttl: int = 64,
) -> bytes:
    """A complete IPv4+UDP datagram with both checksums filled in.

    The UDP checksum is always computed (it is optional in IPv4) and a
    computed zero is transmitted as 0xFFFF per the UDP rules.
    """
    udp_len = 8 + len(payload)
    pseudo = _PSEUDO.pack(src, dst, 0, 17, udp_len)
    udp_wo_sum = _UDP_HEADER.pack(sport, dport, udp_len, 0)
    udp_sum = checksum16(pseudo + udp_wo_sum + payload)
    if udp_sum == 0:
        udp_sum = 0xFFFF
    udp = _UDP_HEADER.pack(sport, dport, udp_len, udp_sum)

    total_len = 20 + udp_len
    ip_wo_sum = _IP_HEADER.pack(0x45, 0, total_len, ident, 0, ttl, 17, 0, src, dst)
    ip_sum = checksum16(ip_wo_sum)
    ip = _IP_HEADER.pack(0x45, 0, total_len, ident, 0, ttl, 17, ip_sum, src, dst)
    return ip + udp + payload


def parse_ipv4_udp(data: bytes):
    """(src, dst, sport, dport, payload) or None for anything not a valid
    IPv4/UDP datagram. Trailing bytes beyond the IP total length are ignored;
    a nonzero UDP checksum is verified, a zero one is accepted as unused."""
    if len(data) < 28:
        return None
    vihl = data[0]
    if vihl >> 4 != 4:
        return None
    ihl = (vihl & 0x0F) * 4
    if ihl < 20 or len(data) < ihl + 8:
        return None
    total_len = (data[2] << 8) | data[3]
    if total_len < ihl + 8 or total_len > len(data):
        return None
    if checksum16(data[:ihl]) != 0:
        return None
    if data[9] != 17:
        return None
    frag = ((data[6] << 8) | data[7]) & 0x3FFF
    if frag:  # fragments never carry a full DNS message
        return None
    src = int.from_bytes(data[12:16], "big")
    dst = int.from_bytes(data[16:20], "big")
    sport = (data[ihl] << 8) | data[ihl + 1]
    dport = (data[ihl + 2] << 8) | data[ihl + 3]
    udp_len = (data[ihl + 4] << 8) | data[ihl + 5]
    if udp_len < 8 or ihl + udp_len > total_len:
        return None
    udp_sum = (data[ihl + 6] << 8) | data[ihl + 7]
    segment = data[ihl : ihl + udp_len]
    if udp_sum != 0:
        pseudo = _PSEUDO.pack(src, dst, 0, 17, udp_len)
        if checksum16(pseudo + segment) != 0:
            return None
    return src, dst, sport, dport, bytes(segment[8:])
